//! Named random streams derived from one seed.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed, with the
//! ChaCha stream id set to the 64-bit FNV-1a hash of the stream name.
//! Streams never share state, so drawing from one leaves the others
//! untouched regardless of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const DROPOUT: &str = "dropout";

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    rng
}

/// The three streams used by training.
pub struct RngStreams {
    pub seed: u64,
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

pub fn seed_all(seed: u64) -> RngStreams {
    RngStreams {
        seed,
        init: stream(seed, INIT),
        shuffle: stream(seed, SHUFFLE),
        dropout: stream(seed, DROPOUT),
    }
}

/// Serializable position of every stream.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct RngState {
    pub seed: u64,
    pub positions: Vec<(String, u128)>,
}

impl RngStreams {
    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            positions: vec![
                (INIT.into(), self.init.get_word_pos()),
                (SHUFFLE.into(), self.shuffle.get_word_pos()),
                (DROPOUT.into(), self.dropout.get_word_pos()),
            ],
        }
    }

    pub fn restore(state: &RngState) -> Self {
        let mut s = seed_all(state.seed);
        for (name, pos) in &state.positions {
            match name.as_str() {
                INIT => s.init.set_word_pos(*pos),
                SHUFFLE => s.shuffle.set_word_pos(*pos),
                DROPOUT => s.dropout.set_word_pos(*pos),
                _ => log::warn!("ignoring unknown rng stream '{name}'"),
            }
        }
        s
    }
}
