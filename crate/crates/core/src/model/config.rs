use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpolationMode {
    /// Weights fixed to `(1 − |s−m|/M)²`.
    Fixed,
    /// Weights initialized to the fixed values and trained.
    Learnable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Attention,
    Lstm,
    Gru,
    BiLstm,
    BiGru,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 5] = [
        EncoderKind::Attention,
        EncoderKind::Lstm,
        EncoderKind::Gru,
        EncoderKind::BiLstm,
        EncoderKind::BiGru,
    ];

    pub fn is_recurrent(self) -> bool {
        self != EncoderKind::Attention
    }

    pub fn is_bidirectional(self) -> bool {
        matches!(self, EncoderKind::BiLstm | EncoderKind::BiGru)
    }
}

/// Divisor under the square root in scaled dot-product attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionScale {
    /// `√(d_model / h)`, the per-head key width.
    HeadDim,
    /// `√d_model`.
    ModelDim,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),* })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok($ty::$variant),)*
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(InterpolationMode { Fixed => "fixed", Learnable => "learnable" });
text_enum!(EncoderKind {
    Attention => "attention",
    Lstm => "lstm",
    Gru => "gru",
    BiLstm => "bilstm",
    BiGru => "bigru",
});
text_enum!(AttentionScale { HeadDim => "d_head", ModelDim => "d_model" });

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Interpolation factor `M`.
    pub interp_factor: usize,
    pub step_in: usize,
    pub step_out: usize,
    pub dropout_p: f64,
    pub interpolation: InterpolationMode,
    pub encoder: EncoderKind,
    pub ffn_dim: usize,
    /// Columns of the encoded weather inputs (35 for real data).
    pub weather_width: usize,
    pub attention_scale: AttentionScale,
    /// Dropout after each attention and feed-forward sub-block.
    pub encoder_dropout: bool,
    /// Recurrent baselines read conv-embedded instead of raw series.
    pub recurrent_embedding: bool,
    /// Initial output level; the output bias starts at its logit.
    pub initial_output: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 512,
            heads: 8,
            layers: 3,
            interp_factor: 24,
            step_in: 24,
            step_out: 24,
            dropout_p: 0.2,
            interpolation: InterpolationMode::Learnable,
            encoder: EncoderKind::Attention,
            ffn_dim: 2048,
            weather_width: crate::data::WEATHER_WIDTH,
            attention_scale: AttentionScale::HeadDim,
            encoder_dropout: false,
            recurrent_embedding: false,
            initial_output: 0.1,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration: `d_model = 16`, two heads, one layer.
    pub fn toy() -> Self {
        ModelConfig {
            d_model: 16,
            heads: 2,
            layers: 1,
            ffn_dim: 64,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 {
            return fail("d_model and heads must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.d_model % 2 != 0 {
            return fail(format!(
                "d_model {} must be even for sinusoidal positions and bidirectional encoders",
                self.d_model
            ));
        }
        if self.interp_factor == 0 || self.step_in == 0 || self.step_out == 0 {
            return fail("interp_factor, step_in and step_out must be at least 1".into());
        }
        if self.ffn_dim < self.d_model {
            return fail(format!(
                "ffn_dim {} must be at least d_model {}",
                self.ffn_dim, self.d_model
            ));
        }
        if self.weather_width == 0 {
            return fail("weather_width must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.dropout_p) {
            return fail(format!("dropout {} outside [0, 1]", self.dropout_p));
        }
        if !(self.initial_output > 0.0 && self.initial_output < 1.0) {
            return fail(format!(
                "initial_output {} outside (0, 1)",
                self.initial_output
            ));
        }
        Ok(())
    }

    /// Flat `key=value` view used by checkpoints.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("d_model", self.d_model.to_string());
        put("heads", self.heads.to_string());
        put("layers", self.layers.to_string());
        put("interp_factor", self.interp_factor.to_string());
        put("step_in", self.step_in.to_string());
        put("step_out", self.step_out.to_string());
        put("dropout", format!("{:?}", self.dropout_p));
        put("interpolation", self.interpolation.to_string());
        put("encoder", self.encoder.to_string());
        put("ffn_dim", self.ffn_dim.to_string());
        put("weather_width", self.weather_width.to_string());
        put("attention_scale", self.attention_scale.to_string());
        put("encoder_dropout", self.encoder_dropout.to_string());
        put("recurrent_embedding", self.recurrent_embedding.to_string());
        put("initial_output", format!("{:?}", self.initial_output));
        m
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = kv
                .get(key)
                .ok_or_else(|| Error::Config(format!("missing model key '{key}'")))?;
            raw.parse()
                .map_err(|_| Error::Config(format!("bad value '{raw}' for '{key}'")))
        }
        let cfg = ModelConfig {
            d_model: get(kv, "d_model")?,
            heads: get(kv, "heads")?,
            layers: get(kv, "layers")?,
            interp_factor: get(kv, "interp_factor")?,
            step_in: get(kv, "step_in")?,
            step_out: get(kv, "step_out")?,
            dropout_p: get(kv, "dropout")?,
            interpolation: get(kv, "interpolation")?,
            encoder: get(kv, "encoder")?,
            ffn_dim: get(kv, "ffn_dim")?,
            weather_width: get(kv, "weather_width")?,
            attention_scale: get(kv, "attention_scale")?,
            encoder_dropout: get(kv, "encoder_dropout")?,
            recurrent_embedding: get(kv, "recurrent_embedding")?,
            initial_output: get(kv, "initial_output")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        assert_eq!(
            (c.d_model, c.heads, c.layers, c.interp_factor),
            (512, 8, 3, 24)
        );
        assert_eq!((c.step_in, c.step_out, c.ffn_dim), (24, 24, 2048));
        assert_eq!(c.head_dim(), 64);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let c = ModelConfig {
            heads: 7,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn kv_round_trip() {
        let c = ModelConfig {
            encoder: EncoderKind::BiGru,
            dropout_p: 0.15,
            ..ModelConfig::toy()
        };
        assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert_eq!(
            "bilstm".parse::<EncoderKind>().unwrap(),
            EncoderKind::BiLstm
        );
        assert!("transformer".parse::<EncoderKind>().is_err());
    }
}
