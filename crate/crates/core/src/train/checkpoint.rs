//! Binary checkpoint files.
//!
//! Layout: 8 magic bytes, a little-endian `u32` format version, a `u32`
//! section count, then sections. Each section is a 4-byte tag, a `u64`
//! payload length, the payload, and the CRC-32 of tag and payload.
//!
//! | tag    | payload                                                   |
//! |--------|-----------------------------------------------------------|
//! | `CONF` | model config as `key=value` lines                         |
//! | `META` | free-form `key=value` lines                               |
//! | `PARM` | per parameter: name, rank, dims, little-endian f64 values |
//! | `SCAL` | presence flag, then weather scaler minima and maxima      |
//! | `RNGS` | seed and the word position of every named stream          |
//! | `EPOC` | epoch index                                               |
//! | `OPTM` | optional Adam hyperparameters, step and moment buffers    |

use std::collections::BTreeMap;
use std::path::Path;

use super::optim::AdamState;
use super::rng::RngState;
use crate::data::weather::NUMERIC_WIDTH;
use crate::data::MinMaxScaler;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MATNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub scaler: Option<MinMaxScaler>,
    pub optimizer: Option<AdamState>,
    pub rng: RngState,
    pub epoch: usize,
    /// Run settings needed to rebuild the data split (boundary, stride…).
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            config: model.config.clone(),
            params: model.params.clone(),
            scaler: None,
            optimizer: None,
            rng: RngState::default(),
            epoch: 0,
            metadata: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<([u8; 4], Vec<u8>)> = vec![
            (*b"CONF", kv_text(&self.config.to_kv())),
            (*b"META", kv_text(&self.metadata)),
            (*b"PARM", encode_params(&self.params)),
            (*b"SCAL", encode_scaler(self.scaler.as_ref())),
            (*b"RNGS", encode_rng(&self.rng)),
            (*b"EPOC", (self.epoch as u64).to_le_bytes().to_vec()),
        ];
        if let Some(opt) = &self.optimizer {
            sections.push((*b"OPTM", encode_optimizer(opt)));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (tag, payload) in sections {
            let mut h = crc32fast::Hasher::new();
            h.update(&tag);
            h.update(&payload);
            out.extend_from_slice(&tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
            out.extend_from_slice(&h.finalize().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Integrity("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = r.u32()?;
        let mut sections: BTreeMap<[u8; 4], &[u8]> = BTreeMap::new();
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.len_u64()?;
            let payload = r.take(len)?;
            let stored = r.u32()?;
            let mut h = crc32fast::Hasher::new();
            h.update(&tag);
            h.update(payload);
            if h.finalize() != stored {
                return Err(Error::Integrity(format!(
                    "checksum mismatch in section {}",
                    String::from_utf8_lossy(&tag)
                )));
            }
            sections.insert(tag, payload);
        }
        if !r.is_done() {
            return Err(Error::Integrity("trailing bytes after last section".into()));
        }
        let section = |tag: &[u8; 4]| {
            sections.get(tag).copied().ok_or_else(|| {
                Error::Integrity(format!("missing section {}", String::from_utf8_lossy(tag)))
            })
        };
        let config = ModelConfig::from_kv(&parse_kv(section(b"CONF")?)?)?;
        let metadata = parse_kv(section(b"META")?)?;
        let params = decode_params(section(b"PARM")?)?;
        let scaler = decode_scaler(section(b"SCAL")?)?;
        let rng = decode_rng(section(b"RNGS")?)?;
        let epoch = Reader::new(section(b"EPOC")?).len_u64()?;
        let optimizer = sections
            .get(b"OPTM")
            .map(|p| decode_optimizer(p))
            .transpose()?;
        Model::from_parts(config.clone(), params.clone())?;
        Ok(Checkpoint {
            config,
            params,
            scaler,
            optimizer,
            rng,
            epoch,
            metadata,
        })
    }
}

pub fn checkpoint_save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn kv_text(kv: &BTreeMap<String, String>) -> Vec<u8> {
    kv.iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect::<String>()
        .into_bytes()
}

fn parse_kv(payload: &[u8]) -> Result<BTreeMap<String, String>> {
    let text = std::str::from_utf8(payload)
        .map_err(|_| Error::Integrity("key-value section is not UTF-8".into()))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Integrity(format!("malformed key-value line '{l}'")))
        })
        .collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    put_f64s(out, t.data());
}

fn encode_params(params: &ParamStore) -> Vec<u8> {
    let mut out = (params.len() as u32).to_le_bytes().to_vec();
    for (name, t) in params.iter() {
        put_str(&mut out, name);
        put_tensor(&mut out, t);
    }
    out
}

fn decode_params(payload: &[u8]) -> Result<ParamStore> {
    let mut r = Reader::new(payload);
    let mut store = ParamStore::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        store.insert(name, r.tensor()?);
    }
    r.finish("PARM")?;
    Ok(store)
}

fn encode_scaler(scaler: Option<&MinMaxScaler>) -> Vec<u8> {
    match scaler {
        None => vec![0],
        Some(s) => {
            let mut out = vec![1];
            put_f64s(&mut out, &s.min);
            put_f64s(&mut out, &s.max);
            out
        }
    }
}

fn decode_scaler(payload: &[u8]) -> Result<Option<MinMaxScaler>> {
    let mut r = Reader::new(payload);
    let scaler = match r.take(1)?[0] {
        0 => None,
        1 => {
            let mut s = MinMaxScaler {
                min: [0.0; NUMERIC_WIDTH],
                max: [0.0; NUMERIC_WIDTH],
            };
            for v in s.min.iter_mut().chain(s.max.iter_mut()) {
                *v = r.f64()?;
            }
            Some(s)
        }
        flag => return Err(Error::Integrity(format!("bad scaler flag {flag}"))),
    };
    r.finish("SCAL")?;
    Ok(scaler)
}

fn encode_rng(state: &RngState) -> Vec<u8> {
    let mut out = state.seed.to_le_bytes().to_vec();
    out.extend_from_slice(&(state.positions.len() as u32).to_le_bytes());
    for (name, pos) in &state.positions {
        put_str(&mut out, name);
        out.extend_from_slice(&pos.to_le_bytes());
    }
    out
}

fn decode_rng(payload: &[u8]) -> Result<RngState> {
    let mut r = Reader::new(payload);
    let seed = r.u64()?;
    let mut positions = Vec::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        positions.push((name, pos));
    }
    r.finish("RNGS")?;
    Ok(RngState { seed, positions })
}

fn encode_optimizer(opt: &AdamState) -> Vec<u8> {
    let mut out = Vec::new();
    put_f64s(&mut out, &[opt.lr, opt.beta1, opt.beta2, opt.eps]);
    out.extend_from_slice(&opt.step.to_le_bytes());
    out.extend_from_slice(&(opt.m.len() as u32).to_le_bytes());
    for (name, m) in &opt.m {
        put_str(&mut out, name);
        put_tensor(&mut out, m);
        let v = opt
            .v
            .get(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(m.shape()));
        put_tensor(&mut out, &v);
    }
    out
}

fn decode_optimizer(payload: &[u8]) -> Result<AdamState> {
    let mut r = Reader::new(payload);
    let mut opt = AdamState::new(1.0);
    opt.lr = r.f64()?;
    opt.beta1 = r.f64()?;
    opt.beta2 = r.f64()?;
    opt.eps = r.f64()?;
    opt.step = r.u64()?;
    for _ in 0..r.u32()? {
        let name = r.string()?;
        opt.m.insert(name.clone(), r.tensor()?);
        opt.v.insert(name, r.tensor()?);
    }
    r.finish("OPTM")?;
    Ok(opt)
}

/// Bounds-checked little-endian cursor; every short read is an integrity
/// error.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Integrity("unexpected end of checkpoint data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len_u64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity("length overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Integrity("name is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.len_u64())
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.saturating_mul(8) <= self.bytes.len() - self.pos)
            .ok_or_else(|| Error::Integrity("tensor larger than its section".into()))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Integrity(e.to_string()))
    }

    fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn finish(&self, section: &str) -> Result<()> {
        if self.is_done() {
            Ok(())
        } else {
            Err(Error::Integrity(format!(
                "unread bytes in section {section}"
            )))
        }
    }
}
