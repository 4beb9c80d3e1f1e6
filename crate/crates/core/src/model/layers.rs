//! Building blocks of the attention branch and the fusion head.

use rand::RngCore;

use super::config::{AttentionScale, ModelConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::BoundParams;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Forward-pass mode. Training carries the dropout stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub(crate) fn dropout(tape: &mut Tape, x: Var, p: f64, mode: &mut Mode<'_>) -> Result<Var> {
    match mode {
        Mode::Eval => tape.dropout(x, p, false, None),
        Mode::Train(rng) => tape.dropout(x, p, true, Some(&mut **rng)),
    }
}

/// The three input branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Pv,
    Hw,
    Fw,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Pv, Branch::Hw, Branch::Fw];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Pv => "pv",
            Branch::Hw => "hw",
            Branch::Fw => "fw",
        }
    }

    pub fn channels(self, cfg: &ModelConfig) -> usize {
        match self {
            Branch::Pv => 1,
            Branch::Hw | Branch::Fw => cfg.weather_width,
        }
    }

    pub fn steps(self, cfg: &ModelConfig) -> usize {
        match self {
            Branch::Pv | Branch::Hw => cfg.step_in,
            Branch::Fw => cfg.step_out,
        }
    }

    /// PV history uses a width-3 temporal kernel; weather a pointwise one.
    pub fn kernel_size(self) -> usize {
        match self {
            Branch::Pv => 3,
            Branch::Hw | Branch::Fw => 1,
        }
    }
}

/// Length-preserving 1-D convolution from `T × C_in` to `T × d_model`.
pub fn embed_branch(tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let w = params.var(&format!("{prefix}.embed.weight"))?;
    let b = params.var(&format!("{prefix}.embed.bias"))?;
    let size = tape.shape(w)[2];
    let channels = tape.shape(w)[1];
    if tape.shape(x).len() != 2 || tape.shape(x)[1] != channels {
        return Err(Error::dim("embed_branch", tape.shape(x), tape.shape(w)));
    }
    let xt = tape.transpose(x)?;
    let y = tape.conv1d(xt, w, b, (size - 1) / 2)?;
    tape.transpose(y)
}

/// Sinusoidal table: `sin(ω_k t)` in even columns, `cos(ω_k t)` in odd ones,
/// with `ω_k = 10000^(−2k/d_model)` and `t = 0, 1, …`.
pub fn positional_encoding(steps: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    let mut out = Tensor::zeros(&[steps, d_model]);
    let data = out.data_mut();
    for t in 0..steps {
        for k in 0..d_model / 2 {
            let omega = 1.0 / 10000f64.powf(2.0 * k as f64 / d_model as f64);
            let angle = omega * t as f64;
            data[t * d_model + 2 * k] = angle.sin();
            data[t * d_model + 2 * k + 1] = angle.cos();
        }
    }
    Ok(out)
}

/// `softmax(Q Kᵀ / √scale) V`; returns the output and the weight matrix.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, scale: f64) -> Result<(Var, Var)> {
    if tape.shape(q) != tape.shape(k) || tape.shape(k)[0] != tape.shape(v)[0] {
        return Err(Error::dim("attention", tape.shape(q), tape.shape(k)));
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / scale.sqrt());
    let weights = tape.softmax(scores, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

pub fn multi_head_attention(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    if cfg.heads == 0 || cfg.d_model % cfg.heads != 0 {
        return Err(Error::Config(format!(
            "{} heads do not divide d_model {}",
            cfg.heads, cfg.d_model
        )));
    }
    let scale = match cfg.attention_scale {
        AttentionScale::HeadDim => cfg.head_dim() as f64,
        AttentionScale::ModelDim => cfg.d_model as f64,
    };
    let mut heads = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let wq = params.var(&format!("{prefix}.w_q{i}"))?;
        let wk = params.var(&format!("{prefix}.w_k{i}"))?;
        let wv = params.var(&format!("{prefix}.w_v{i}"))?;
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        heads.push(attention(tape, q, k, v, scale)?.0);
    }
    let joined = tape.concat(&heads, 1)?;
    let wo = params.var(&format!("{prefix}.w_o"))?;
    tape.matmul(joined, wo)
}

/// Pre-norm block: `x₁ = x + MHA(LN(x))`, `out = x₁ + FFN(LN(x₁))`.
pub fn encoder_layer(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let p = |s: &str| params.var(&format!("{prefix}.{s}"));
    let n1 = tape.layer_norm(x, p("ln1.gain")?, p("ln1.offset")?, LAYER_NORM_EPS)?;
    let mut a = multi_head_attention(tape, params, &format!("{prefix}.attn"), n1, cfg)?;
    if cfg.encoder_dropout {
        a = dropout(tape, a, cfg.dropout_p, mode)?;
    }
    let x1 = tape.add(x, a)?;
    let n2 = tape.layer_norm(x1, p("ln2.gain")?, p("ln2.offset")?, LAYER_NORM_EPS)?;
    let h = tape.linear(n2, p("ffn.w1")?, Some(p("ffn.b1")?))?;
    let h = tape.relu(h);
    let mut f = tape.linear(h, p("ffn.w2")?, Some(p("ffn.b2")?))?;
    if cfg.encoder_dropout {
        f = dropout(tape, f, cfg.dropout_p, mode)?;
    }
    tape.add(x1, f)
}

/// `cfg.layers` stacked encoder layers named `{prefix}.layer{l}`.
pub fn encode_branch(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    (0..cfg.layers).try_fold(x, |h, l| {
        encoder_layer(tape, params, &format!("{prefix}.layer{l}"), h, cfg, mode)
    })
}

/// Contribution `(1 − |s − m| / M)²` of relative position `s` to slot `m`.
pub fn interpolation_weight(s: f64, m: f64, factor: f64) -> f64 {
    (1.0 - (s - m).abs() / factor).powi(2)
}

/// `T × M` dense-interpolation weights with `s = t·M/T` for 1-based `t`
/// and `m`.
pub fn interpolation_weights(steps: usize, factor: usize) -> Tensor {
    let (t_len, m_len) = (steps as f64, factor as f64);
    Tensor::from_fn(&[steps, factor], |idx| {
        let t = (idx / factor + 1) as f64;
        let m = (idx % factor + 1) as f64;
        interpolation_weight(t * m_len / t_len, m, m_len)
    })
}

/// `U = Wᵀ S` (`M × d_model`) and its last row as a `d_model` vector.
pub fn dense_interpolate(tape: &mut Tape, states: Var, weights: Var) -> Result<(Var, Var)> {
    let (ss, sw) = (tape.shape(states).to_vec(), tape.shape(weights).to_vec());
    if ss.len() != 2 || sw.len() != 2 || ss[0] != sw[0] {
        return Err(Error::dim("dense_interpolate", &ss, &sw));
    }
    let wt = tape.transpose(weights)?;
    let u = tape.matmul(wt, states)?;
    let last = tape.narrow(u, 0, sw[1] - 1, 1)?;
    let rep = tape.reshape(last, &[ss[1]])?;
    Ok((u, rep))
}

/// Two-level concatenation fusion and the sigmoid output layer.
pub fn fusion_forward(
    tape: &mut Tape,
    params: &BoundParams,
    reps: [Var; 3],
    cfg: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let [pv, hw, fw] = reps;
    let hist = tape.concat(&[pv, hw], 0)?;
    let hist = dropout(tape, hist, cfg.dropout_p, mode)?;
    let hist = tape.linear(
        hist,
        params.var("fusion.hist.weight")?,
        Some(params.var("fusion.hist.bias")?),
    )?;
    let hist = tape.relu(hist);

    let joint = tape.concat(&[hist, fw], 0)?;
    let joint = dropout(tape, joint, cfg.dropout_p, mode)?;
    let joint = tape.linear(
        joint,
        params.var("fusion.joint.weight")?,
        Some(params.var("fusion.joint.bias")?),
    )?;
    let joint = tape.relu(joint);

    let joint = dropout(tape, joint, cfg.dropout_p, mode)?;
    let out = tape.linear(
        joint,
        params.var("output.weight")?,
        Some(params.var("output.bias")?),
    )?;
    Ok(tape.sigmoid(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(5, 8).unwrap();
        let first: Vec<f64> = pe.row(0).to_vec();
        assert_eq!(first, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for t in 0..5 {
            assert_eq!(pe.at2(t, 0), (t as f64).sin());
        }
        assert!(positional_encoding(3, 7).is_err());
    }

    #[test]
    fn attention_examples() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::zeros(&[3, 2]));
        let k = tape.constant(Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![0.0, -1.0],
            vec![3.0, 1.0],
        ]));
        let v = tape.constant(Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![2.0, 6.0],
            vec![3.0, 3.0],
        ]));
        let (out, w) = attention(&mut tape, q, k, v, 2.0).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(out).row(r), &[2.0, 3.0]);
            assert!((tape.value(w).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }

        let q1 = tape.constant(Tensor::from_rows(&[vec![0.3, -0.7]]));
        let v1 = tape.constant(Tensor::from_rows(&[vec![5.0, -2.0]]));
        let (out, _) = attention(&mut tape, q1, q1, v1, 2.0).unwrap();
        assert_eq!(tape.value(out).data(), &[5.0, -2.0]);
    }

    #[test]
    fn interpolation_weight_formula() {
        let w = interpolation_weights(1, 1);
        assert_eq!(w.data(), &[1.0]);
        let w = interpolation_weights(24, 24);
        for t in 0..24 {
            assert_eq!(w.at2(t, t), 1.0);
        }
        assert!(w.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // T=4, M=2: t=2 gives s=1 (= m=1); t=1, m=2 gives |s-m| = 1.5
        let w = interpolation_weights(4, 2);
        assert_eq!(w.at2(1, 0), 1.0);
        assert_eq!(w.at2(0, 1), 0.0625);
        assert!(w.data().iter().all(|&v| v > 0.0));
        assert_eq!(interpolation_weight(3.0, 3.0, 4.0), 1.0);
        assert_eq!(interpolation_weight(5.0, 1.0, 4.0), 0.0);
    }

    #[test]
    fn dense_interpolation_single_step() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::from_rows(&[vec![0.5, -1.5, 2.0]]));
        let w = tape.constant(interpolation_weights(1, 1));
        let (u, rep) = dense_interpolate(&mut tape, s, w).unwrap();
        assert_eq!(tape.shape(u), &[1, 3]);
        assert_eq!(tape.value(rep).data(), &[0.5, -1.5, 2.0]);
    }

    fn toy_layer_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamStore {
        let mut store = ParamStore::new();
        super::super::init_encoder_layer(&mut store, "enc", cfg, rng);
        store
    }

    #[test]
    fn zeroed_residual_projections_make_identity() {
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            ffn_dim: 32,
            ..ModelConfig::toy()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = toy_layer_params(&cfg, &mut rng);
        store.insert("enc.attn.w_o", Tensor::zeros(&[8, 8]));
        store.insert("enc.ffn.w2", Tensor::zeros(&[8, 32]));
        let x = Tensor::from_fn(&[4, 8], |i| (i as f64 * 0.37).sin());
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = encoder_layer(&mut tape, &bound, "enc", xv, &cfg, &mut Mode::Eval).unwrap();
        assert_eq!(tape.value(y), &x);

        let zero = ModelConfig { layers: 0, ..cfg };
        let y = encode_branch(&mut tape, &bound, "enc", xv, &zero, &mut Mode::Eval).unwrap();
        assert_eq!(y, xv);
    }

    #[test]
    fn encoder_layer_is_permutation_equivariant_without_positions() {
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            ..ModelConfig::toy()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let store = toy_layer_params(&cfg, &mut rng);
        let x = Tensor::from_fn(&[5, 8], |i| ((i * 7 % 11) as f64 - 5.0) / 4.0);
        let perm = [3, 0, 4, 1, 2];
        let px = Tensor::from_rows(&perm.iter().map(|&r| x.row(r).to_vec()).collect::<Vec<_>>());
        let run = |input: &Tensor| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, false);
            let v = tape.constant(input.clone());
            let y = encoder_layer(&mut tape, &bound, "enc", v, &cfg, &mut Mode::Eval).unwrap();
            tape.value(y).clone()
        };
        let (y, py) = (run(&x), run(&px));
        for (i, &r) in perm.iter().enumerate() {
            for (a, b) in py.row(i).iter().zip(y.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mha_head_width() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.head_dim(), 64);
        let bad = ModelConfig {
            heads: 7,
            ..ModelConfig::toy()
        };
        let mut tape = Tape::new();
        let store = ParamStore::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[2, 16]));
        assert!(matches!(
            multi_head_attention(&mut tape, &bound, "a", x, &bad),
            Err(Error::Config(_))
        ));
    }
}
