//! MATNet and its recurrent baselines.
//!
//! Every branch series passes through its own encoder; the three branch
//! representations meet in the two-level fusion head. With the attention
//! encoder a branch is conv-embedded, offset by sinusoidal positions, run
//! through `L` pre-norm layers and summarized by dense interpolation.
//! Recurrent kinds replace all of that with an LSTM or GRU over the raw
//! series.

pub mod config;
pub mod layers;
pub mod recurrent;

use std::collections::BTreeMap;

use rand::{Rng, RngCore};

pub use config::{AttentionScale, EncoderKind, InterpolationMode, ModelConfig};
pub use layers::{Branch, Mode};

use crate::autodiff::{Tape, Var};
use crate::data::BranchInputs;
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;
use layers::{
    dense_interpolate, embed_branch, encode_branch, fusion_forward, interpolation_weights,
    positional_encoding,
};
use recurrent::{recurrent_encode, GRU_GATES, LSTM_GATES};

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Creates the parameters of one pre-norm encoder layer under `prefix`.
pub(crate) fn init_encoder_layer(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
) {
    let (d, dk, ffn) = (cfg.d_model, cfg.head_dim(), cfg.ffn_dim);
    for ln in ["ln1", "ln2"] {
        store.insert(format!("{prefix}.{ln}.gain"), Tensor::filled(&[d], 1.0));
        store.insert(format!("{prefix}.{ln}.offset"), Tensor::zeros(&[d]));
    }
    for i in 0..cfg.heads {
        for proj in ["w_q", "w_k", "w_v"] {
            store.init_uniform(format!("{prefix}.attn.{proj}{i}"), &[d, dk], d, rng);
        }
    }
    store.init_uniform(format!("{prefix}.attn.w_o"), &[d, d], d, rng);
    store.init_uniform(format!("{prefix}.ffn.w1"), &[ffn, d], d, rng);
    store.insert(format!("{prefix}.ffn.b1"), Tensor::zeros(&[ffn]));
    store.init_uniform(format!("{prefix}.ffn.w2"), &[d, ffn], ffn, rng);
    store.insert(format!("{prefix}.ffn.b2"), Tensor::zeros(&[d]));
}

fn init_recurrent(
    store: &mut ParamStore,
    prefix: &str,
    gates: &[char],
    input: usize,
    hidden: usize,
    rng: &mut impl Rng,
) {
    for g in gates {
        store.init_uniform(format!("{prefix}.w_i{g}"), &[hidden, input], input, rng);
        store.insert(format!("{prefix}.b_i{g}"), Tensor::zeros(&[hidden]));
        store.init_uniform(format!("{prefix}.w_h{g}"), &[hidden, hidden], hidden, rng);
        store.insert(format!("{prefix}.b_h{g}"), Tensor::zeros(&[hidden]));
    }
}

/// Fresh parameters for `cfg`, drawn from `rng` in a fixed order.
fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    let d = cfg.d_model;
    let mut store = ParamStore::new();
    for branch in Branch::ALL {
        let name = branch.name();
        let channels = branch.channels(cfg);
        let embed = |store: &mut ParamStore, rng: &mut _| {
            let k = branch.kernel_size();
            store.init_uniform(
                format!("{name}.embed.weight"),
                &[d, channels, k],
                channels * k,
                rng,
            );
            store.insert(format!("{name}.embed.bias"), Tensor::zeros(&[d]));
        };
        match cfg.encoder {
            EncoderKind::Attention => {
                embed(&mut store, rng);
                for l in 0..cfg.layers {
                    init_encoder_layer(&mut store, &format!("{name}.layer{l}"), cfg, rng);
                }
                if cfg.interpolation == InterpolationMode::Learnable {
                    store.insert(
                        format!("{name}.interp.weight"),
                        interpolation_weights(branch.steps(cfg), cfg.interp_factor),
                    );
                }
            }
            kind => {
                let input = if cfg.recurrent_embedding {
                    embed(&mut store, rng);
                    d
                } else {
                    channels
                };
                let (cell, gates): (&str, &[char]) = match kind {
                    EncoderKind::Lstm | EncoderKind::BiLstm => ("lstm", &LSTM_GATES),
                    _ => ("gru", &GRU_GATES),
                };
                let hidden = if kind.is_bidirectional() { d / 2 } else { d };
                init_recurrent(
                    &mut store,
                    &format!("{name}.{cell}.fwd"),
                    gates,
                    input,
                    hidden,
                    rng,
                );
                if kind.is_bidirectional() {
                    init_recurrent(
                        &mut store,
                        &format!("{name}.{cell}.bwd"),
                        gates,
                        input,
                        hidden,
                        rng,
                    );
                }
            }
        }
    }
    store.init_uniform("fusion.hist.weight", &[d, 2 * d], 2 * d, rng);
    store.insert("fusion.hist.bias", Tensor::zeros(&[d]));
    store.init_uniform("fusion.joint.weight", &[d, 2 * d], 2 * d, rng);
    store.insert("fusion.joint.bias", Tensor::zeros(&[d]));
    store.init_uniform("output.weight", &[cfg.step_out, d], d, rng);
    store.insert(
        "output.bias",
        Tensor::filled(&[cfg.step_out], logit(cfg.initial_output)),
    );
    store
}

/// Checks the three input tensors against the configured shapes.
pub fn check_inputs(cfg: &ModelConfig, inputs: &BranchInputs) -> Result<()> {
    for (branch, t) in Branch::ALL
        .into_iter()
        .zip([&inputs.pv, &inputs.hw, &inputs.fw])
    {
        let want = [branch.steps(cfg), branch.channels(cfg)];
        if t.shape() != want {
            return Err(Error::dim(branch.name(), t.shape(), &want));
        }
    }
    Ok(())
}

fn inputs_of(inputs: &BranchInputs) -> [&Tensor; 3] {
    [&inputs.pv, &inputs.hw, &inputs.fw]
}

/// Attention-encoder branch: embed, add positions, encode, interpolate.
fn attention_branch(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &ModelConfig,
    branch: Branch,
    x: Var,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let name = branch.name();
    let steps = branch.steps(cfg);
    let e = embed_branch(tape, params, name, x)?;
    let pe = tape.constant(positional_encoding(steps, cfg.d_model)?);
    let e = tape.add(e, pe)?;
    let s = encode_branch(tape, params, name, e, cfg, mode)?;
    let w = match cfg.interpolation {
        InterpolationMode::Fixed => tape.constant(interpolation_weights(steps, cfg.interp_factor)),
        InterpolationMode::Learnable => params.var(&format!("{name}.interp.weight"))?,
    };
    Ok(dense_interpolate(tape, s, w)?.1)
}

/// Full MATNet forward pass on one sample.
pub fn matnet_forward(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &ModelConfig,
    inputs: &BranchInputs,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    check_inputs(cfg, inputs)?;
    let mut reps = Vec::with_capacity(3);
    for (branch, t) in Branch::ALL.into_iter().zip(inputs_of(inputs)) {
        let x = tape.constant(t.clone());
        reps.push(attention_branch(tape, params, cfg, branch, x, mode)?);
    }
    fusion_forward(tape, params, [reps[0], reps[1], reps[2]], cfg, mode)
}

/// Recurrent-baseline forward pass: one recurrent encoder per branch and
/// the shared fusion head.
pub fn baseline_forward(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &ModelConfig,
    inputs: &BranchInputs,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    check_inputs(cfg, inputs)?;
    let cell = match cfg.encoder {
        EncoderKind::Attention => {
            return Err(Error::Config(
                "baseline_forward needs a recurrent encoder".into(),
            ))
        }
        EncoderKind::Lstm | EncoderKind::BiLstm => "lstm",
        EncoderKind::Gru | EncoderKind::BiGru => "gru",
    };
    let mut reps = Vec::with_capacity(3);
    for (branch, t) in Branch::ALL.into_iter().zip(inputs_of(inputs)) {
        let name = branch.name();
        let mut x = tape.constant(t.clone());
        if cfg.recurrent_embedding {
            x = embed_branch(tape, params, name, x)?;
        }
        reps.push(recurrent_encode(
            tape,
            params,
            &format!("{name}.{cell}"),
            x,
            cfg.encoder,
            cfg.d_model,
        )?);
    }
    fusion_forward(tape, params, [reps[0], reps[1], reps[2]], cfg, mode)
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Initializes weights uniformly in `±√(1/fan_in)`, biases at zero,
    /// norms at unit gain, and learnable interpolation at the fixed formula.
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, rng);
        Ok(Model { config, params })
    }

    /// Pairs a config with externally supplied parameters, checking that
    /// names and shapes match what the config expects.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = Self::parameter_shapes(&config);
        let found: BTreeMap<String, Vec<usize>> = params
            .iter()
            .map(|(k, v)| (k.to_string(), v.shape().to_vec()))
            .collect();
        if expected != found {
            let missing: Vec<_> = expected
                .keys()
                .filter(|k| !found.contains_key(*k))
                .collect();
            let extra: Vec<_> = found
                .keys()
                .filter(|k| !expected.contains_key(*k))
                .collect();
            let reshaped: Vec<_> = expected
                .iter()
                .filter(|(k, s)| found.get(*k).is_some_and(|f| f != *s))
                .map(|(k, _)| k)
                .collect();
            return Err(Error::Contract(format!(
                "parameters do not match config: missing {missing:?}, unexpected {extra:?}, wrong shape {reshaped:?}"
            )));
        }
        Ok(Model { config, params })
    }

    /// Names and shapes of every parameter `config` requires.
    pub fn parameter_shapes(config: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        init_params(config, &mut rng)
            .iter()
            .map(|(k, v)| (k.to_string(), v.shape().to_vec()))
            .collect()
    }

    /// Dispatches to the attention or recurrent forward pass.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        inputs: &BranchInputs,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        if self.config.encoder.is_recurrent() {
            baseline_forward(tape, params, &self.config, inputs, mode)
        } else {
            matnet_forward(tape, params, &self.config, inputs, mode)
        }
    }

    /// Eval-mode prediction for one sample.
    pub fn predict(&self, inputs: &BranchInputs) -> Result<Vec<f64>> {
        Ok(self.predict_batch(std::slice::from_ref(inputs))?.remove(0))
    }

    /// Eval-mode predictions, binding the parameters once.
    pub fn predict_batch(&self, batch: &[BranchInputs]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let base = tape.len();
        batch
            .iter()
            .map(|inputs| {
                let y = self.forward(&mut tape, &bound, inputs, &mut Mode::Eval)?;
                let out = tape.value(y).data().to_vec();
                tape.truncate(base);
                Ok(out)
            })
            .collect()
    }

    /// Training-mode forward pass with dropout drawn from `rng`.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        inputs: &BranchInputs,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        self.forward(tape, params, inputs, &mut Mode::Train(rng))
    }
}
