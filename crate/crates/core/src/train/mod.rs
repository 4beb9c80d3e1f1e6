//! Mini-batch training with Adam, plateau scheduling and best-epoch
//! selection on a chronological validation tail.

pub mod checkpoint;
pub mod optim;
pub mod plateau;
pub mod rng;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::RngCore;

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_VERSION};
pub use optim::{adam_step, clip_grad_norm, AdamState};
pub use plateau::PlateauState;
pub use rng::{seed_all, RngState, RngStreams};

use crate::autodiff::Tape;
use crate::data::SampleWindow;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Fraction of the training windows, taken from the end, held out for
    /// scheduling and model selection. Zero monitors the training loss.
    pub validation_fraction: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            shuffle: true,
            validation_fraction: 0.1,
            grad_clip: None,
            plateau_factor: 0.2,
            plateau_patience: 20,
            plateau_delta: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config("plateau_factor must be in (0, 1)".into()));
        }
        Ok(())
    }

    fn plateau(&self) -> PlateauState {
        PlateauState {
            factor: self.plateau_factor,
            patience: self.plateau_patience,
            delta: self.plateau_delta,
            ..PlateauState::new(self.lr)
        }
    }
}

/// Model with weights drawn from the `init` stream of `seed`.
pub fn initialize(config: ModelConfig, seed: u64) -> Result<Model> {
    Model::new(config, &mut rng::stream(seed, rng::INIT))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    /// Rate used during this epoch.
    pub lr: f64,
}

pub fn write_history<W: Write>(history: &[EpochRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,train_mse,val_mse,lr")?;
    for r in history {
        let val = r.val_mse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", r.epoch, r.train_mse, val, r.lr)?;
    }
    Ok(())
}

/// State captured at the best epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub metric: f64,
    pub params: ParamStore,
    pub optimizer: AdamState,
    pub rng: RngState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best: Snapshot,
}

impl FitOutcome {
    /// Checkpoint of the best epoch for `config`.
    pub fn checkpoint(&self, config: &ModelConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            params: self.best.params.clone(),
            scaler: None,
            optimizer: Some(self.best.optimizer.clone()),
            rng: self.best.rng.clone(),
            epoch: self.best.epoch,
            metadata: Default::default(),
        }
    }
}

fn target_tensor(s: &SampleWindow) -> Tensor {
    Tensor::vector(s.target.clone())
}

/// Mean per-sample MSE of eval-mode predictions.
pub fn evaluate_mse(model: &Model, samples: &[SampleWindow]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty set".into()));
    }
    let inputs: Vec<_> = samples.iter().map(|s| s.inputs.clone()).collect();
    let preds = model.predict_batch(&inputs)?;
    let total: f64 = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            p.iter()
                .zip(&s.target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / p.len() as f64
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// One optimization step on a mini-batch; returns the batch's mean loss.
pub fn train_step(
    model: &mut Model,
    batch: &[&SampleWindow],
    optimizer: &mut AdamState,
    dropout: &mut dyn RngCore,
    grad_clip: Option<f64>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let mut total = None;
    for s in batch {
        let y = model.forward_train(&mut tape, &bound, &s.inputs, dropout)?;
        let target = tape.constant(target_tensor(s));
        let loss = tape.mse_loss(y, target)?;
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
    let mean = tape.scale(total, 1.0 / batch.len() as f64);
    tape.backward(mean)?;
    let mut grads = bound.gradients(&tape);
    if let Some(c) = grad_clip {
        clip_grad_norm(&mut grads, c);
    }
    adam_step(&mut model.params, &grads, optimizer)?;
    Ok(tape.value(mean).item())
}

/// One pass over `samples` in mini-batches; returns the mean per-sample
/// training loss.
pub fn train_epoch(
    model: &mut Model,
    samples: &[SampleWindow],
    optimizer: &mut AdamState,
    batch_size: usize,
    shuffle: Option<&mut dyn RngCore>,
    dropout: &mut dyn RngCore,
    grad_clip: Option<f64>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some(rng) = shuffle {
        order.shuffle(rng);
    }
    let mut sum = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let batch: Vec<&SampleWindow> = chunk.iter().map(|&i| &samples[i]).collect();
        sum += train_step(model, &batch, optimizer, dropout, grad_clip)? * batch.len() as f64;
    }
    Ok(sum / samples.len() as f64)
}

/// Splits off the chronological validation tail.
pub fn validation_split(
    samples: &[SampleWindow],
    fraction: f64,
) -> (&[SampleWindow], &[SampleWindow]) {
    let n_val = (samples.len() as f64 * fraction).floor() as usize;
    let n_val = n_val.min(samples.len().saturating_sub(1));
    samples.split_at(samples.len() - n_val)
}

/// Trains `model` in place and leaves it holding the best epoch's weights.
pub fn fit(model: &mut Model, samples: &[SampleWindow], cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let (train, val) = validation_split(samples, cfg.validation_fraction);
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    log::info!(
        "training on {} windows, validating on {}, {} epochs",
        train.len(),
        val.len(),
        cfg.epochs
    );
    let mut streams = seed_all(cfg.seed);
    let mut optimizer = AdamState::new(cfg.lr);
    let mut plateau = cfg.plateau();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Snapshot> = None;

    for epoch in 1..=cfg.epochs {
        let lr = plateau.lr();
        optimizer.lr = lr;
        let shuffle: Option<&mut dyn RngCore> = if cfg.shuffle {
            Some(&mut streams.shuffle)
        } else {
            None
        };
        let train_mse = train_epoch(
            model,
            train,
            &mut optimizer,
            cfg.batch_size,
            shuffle,
            &mut streams.dropout,
            cfg.grad_clip,
        )?;
        if !train_mse.is_finite() {
            return Err(Error::Data(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        let val_mse = if val.is_empty() {
            None
        } else {
            Some(evaluate_mse(model, val)?)
        };
        let metric = val_mse.unwrap_or(train_mse);
        log::debug!("epoch {epoch}: train {train_mse:.6e} val {val_mse:?} lr {lr:e}");
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            lr,
        });
        if best.as_ref().is_none_or(|b| metric < b.metric) {
            best = Some(Snapshot {
                epoch,
                metric,
                params: model.params.clone(),
                optimizer: optimizer.clone(),
                rng: streams.state(),
            });
        }
        plateau.step(metric);
    }
    let best = best.expect("at least one epoch");
    log::info!(
        "best epoch {} with monitored mse {:.6e}",
        best.epoch,
        best.metric
    );
    model.params = best.params.clone();
    Ok(FitOutcome { history, best })
}
