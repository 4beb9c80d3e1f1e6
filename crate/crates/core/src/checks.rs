//! Finite-difference gradient suite over every differentiable component.
//!
//! Each check builds a small, seeded instance of one component, reduces its
//! output to a scalar through a fixed random projection, and compares tape
//! gradients with central differences for every parameter element. Points
//! with a ReLU input near its kink are redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::data::BranchInputs;
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck_params, GradcheckReport};
use crate::model::layers::{
    dense_interpolate, encoder_layer, fusion_forward, interpolation_weights, Mode,
};
use crate::model::recurrent::{gru_step, lstm_step, GRU_GATES, LSTM_GATES};
use crate::model::{init_encoder_layer, EncoderKind, InterpolationMode, Model, ModelConfig};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub name: &'static str,
    pub report: GradcheckReport,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `Σ y ⊙ R` for a fixed random `R`, so every output element matters with
/// a distinct weight.
fn projection_loss(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let r = random(tape.shape(y), &mut ChaCha8Rng::seed_from_u64(seed));
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

/// Configuration of the full-model check: 4 input and output steps,
/// `d_model = 8`, two heads, one layer, 4 weather columns.
pub fn toy_check_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        layers: 1,
        ffn_dim: 32,
        step_in: 4,
        step_out: 4,
        interp_factor: 4,
        weather_width: 4,
        ..ModelConfig::default()
    }
}

/// ReLU inputs closer than this to the kink make finite differences
/// straddle it, so such points are redrawn.
const KINK_MARGIN: f64 = 10.0 * GRADCHECK_EPS;
const MAX_DRAWS: u64 = 20;

type LossFn = Box<dyn Fn(&mut Tape, &BoundParams) -> Result<Var>>;

/// One check point: the parameters to perturb and the scalar loss.
struct Case {
    store: ParamStore,
    loss: LossFn,
}

impl Case {
    fn new(
        store: ParamStore,
        loss: impl Fn(&mut Tape, &BoundParams) -> Result<Var> + 'static,
    ) -> Self {
        Case {
            store,
            loss: Box::new(loss),
        }
    }

    fn relu_margin(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        (self.loss)(&mut tape, &bound)?;
        Ok(tape.relu_margin().unwrap_or(f64::INFINITY))
    }
}

/// Distinct seed per (component, draw).
fn reseed(base: u64, draw: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base + 1000 * draw)
}

/// Checks the first draw whose ReLU inputs all clear [`KINK_MARGIN`].
fn run(name: &'static str, build: impl Fn(u64) -> Result<Case>) -> Result<GradientCheck> {
    for draw in 0..MAX_DRAWS {
        let case = build(draw)?;
        let margin = case.relu_margin()?;
        if margin > KINK_MARGIN {
            let report = gradcheck_params(&case.store, &case.loss, GRADCHECK_EPS, GRADCHECK_TOL)?;
            return Ok(GradientCheck { name, report });
        }
        log::debug!("{name}: draw {draw} has a ReLU input {margin:e} from the kink");
    }
    Err(Error::Contract(format!(
        "{name}: no draw in {MAX_DRAWS} keeps ReLU inputs clear of the kink"
    )))
}

fn conv1d_case(draw: u64) -> Result<Case> {
    let mut rng = reseed(1, draw);
    let mut s = ParamStore::new();
    s.insert("x", random(&[3, 7], &mut rng));
    s.insert("k", random(&[4, 3, 3], &mut rng));
    s.insert("b", random(&[4], &mut rng));
    Ok(Case::new(s, move |t, p| {
        let y = t.conv1d(p.var("x")?, p.var("k")?, p.var("b")?, 1)?;
        projection_loss(t, y, 101)
    }))
}

fn layer_norm_case(draw: u64) -> Result<Case> {
    let mut rng = reseed(2, draw);
    let mut s = ParamStore::new();
    s.insert("x", random(&[4, 8], &mut rng));
    s.insert("g", random(&[8], &mut rng));
    s.insert("o", random(&[8], &mut rng));
    Ok(Case::new(s, move |t, p| {
        let y = t.layer_norm(p.var("x")?, p.var("g")?, p.var("o")?, 1e-5)?;
        projection_loss(t, y, 102)
    }))
}

fn encoder_layer_case(draw: u64) -> Result<Case> {
    let cfg = toy_check_config();
    let mut rng = reseed(3, draw);
    let mut s = ParamStore::new();
    init_encoder_layer(&mut s, "enc", &cfg, &mut rng);
    for ln in ["ln1", "ln2"] {
        s.insert(format!("enc.{ln}.gain"), random(&[8], &mut rng));
        s.insert(format!("enc.{ln}.offset"), random(&[8], &mut rng));
    }
    s.insert("x", random(&[4, 8], &mut rng));
    Ok(Case::new(s, move |t, p| {
        let y = encoder_layer(t, p, "enc", p.var("x")?, &cfg, &mut Mode::Eval)?;
        projection_loss(t, y, 103)
    }))
}

fn interpolation_case(mode: InterpolationMode, draw: u64) -> Result<Case> {
    let mut rng = reseed(4, draw);
    let mut s = ParamStore::new();
    s.insert("states", random(&[6, 8], &mut rng));
    if mode == InterpolationMode::Learnable {
        s.insert("w", interpolation_weights(6, 4));
    }
    Ok(Case::new(s, move |t, p| {
        let w = match mode {
            InterpolationMode::Fixed => t.constant(interpolation_weights(6, 4)),
            InterpolationMode::Learnable => p.var("w")?,
        };
        let (u, rep) = dense_interpolate(t, p.var("states")?, w)?;
        let a = projection_loss(t, u, 104)?;
        let b = projection_loss(t, rep, 105)?;
        t.add(a, b)
    }))
}

fn gate_params(
    s: &mut ParamStore,
    prefix: &str,
    gates: &[char],
    input: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) {
    for g in gates {
        s.insert(format!("{prefix}.w_i{g}"), random(&[hidden, input], rng));
        s.insert(format!("{prefix}.b_i{g}"), random(&[hidden], rng));
        s.insert(format!("{prefix}.w_h{g}"), random(&[hidden, hidden], rng));
        s.insert(format!("{prefix}.b_h{g}"), random(&[hidden], rng));
    }
}

fn lstm_case(draw: u64) -> Result<Case> {
    let mut rng = reseed(5, draw);
    let mut s = ParamStore::new();
    gate_params(&mut s, "cell", &LSTM_GATES, 3, 4, &mut rng);
    s.insert("x", random(&[3], &mut rng));
    s.insert("h", random(&[4], &mut rng));
    s.insert("c", random(&[4], &mut rng));
    Ok(Case::new(s, move |t, p| {
        let (h, c) = lstm_step(t, p, "cell", p.var("x")?, p.var("h")?, p.var("c")?)?;
        let a = projection_loss(t, h, 106)?;
        let b = projection_loss(t, c, 107)?;
        t.add(a, b)
    }))
}

fn gru_case(draw: u64) -> Result<Case> {
    let mut rng = reseed(6, draw);
    let mut s = ParamStore::new();
    gate_params(&mut s, "cell", &GRU_GATES, 3, 4, &mut rng);
    s.insert("x", random(&[3], &mut rng));
    s.insert("h", random(&[4], &mut rng));
    Ok(Case::new(s, move |t, p| {
        let h = gru_step(t, p, "cell", p.var("x")?, p.var("h")?)?;
        projection_loss(t, h, 108)
    }))
}

fn fusion_case(draw: u64) -> Result<Case> {
    let cfg = toy_check_config();
    let model = Model::new(cfg.clone(), &mut reseed(7, draw))?;
    let mut rng = reseed(8, draw);
    let mut s = ParamStore::new();
    for (name, t) in model.params.iter() {
        if name.starts_with("fusion.") || name.starts_with("output.") {
            s.insert(name, t.clone());
        }
    }
    for b in ["pv", "hw", "fw"] {
        s.insert(format!("rep.{b}"), random(&[8], &mut rng));
    }
    Ok(Case::new(s, move |t, p| {
        let reps = [p.var("rep.pv")?, p.var("rep.hw")?, p.var("rep.fw")?];
        // the same dropout masks on every evaluation
        let mut drop = ChaCha8Rng::seed_from_u64(9);
        let y = fusion_forward(t, p, reps, &cfg, &mut Mode::Train(&mut drop))?;
        projection_loss(t, y, 109)
    }))
}

fn toy_inputs(cfg: &ModelConfig, mut rng: ChaCha8Rng) -> (BranchInputs, Tensor) {
    let mut unit = |r: usize, c: usize| Tensor::from_fn(&[r, c], |_| rng.gen::<f64>());
    let inputs = BranchInputs {
        pv: unit(cfg.step_in, 1),
        hw: unit(cfg.step_in, cfg.weather_width),
        fw: unit(cfg.step_out, cfg.weather_width),
    };
    let target = unit(cfg.step_out, 1)
        .reshaped(vec![cfg.step_out])
        .expect("same length");
    (inputs, target)
}

fn full_model_case(cfg: ModelConfig, draw: u64) -> Result<Case> {
    let model = Model::new(cfg.clone(), &mut reseed(10, draw))?;
    let (inputs, target) = toy_inputs(&cfg, reseed(11, draw));
    Ok(Case::new(model.params.clone(), move |t, p| {
        let y = model.forward(t, p, &inputs, &mut Mode::Eval)?;
        let target = t.constant(target.clone());
        t.mse_loss(y, target)
    }))
}

/// Runs every check in a fixed order.
pub fn gradient_suite() -> Result<Vec<GradientCheck>> {
    let toy = toy_check_config();
    let fixed = ModelConfig {
        interpolation: InterpolationMode::Fixed,
        ..toy.clone()
    };
    let bilstm = ModelConfig {
        encoder: EncoderKind::BiLstm,
        ..toy.clone()
    };
    let gru = ModelConfig {
        encoder: EncoderKind::Gru,
        ..toy.clone()
    };
    Ok(vec![
        run("conv1d", conv1d_case)?,
        run("layer_norm", layer_norm_case)?,
        run("encoder_layer", encoder_layer_case)?,
        run("dense_interpolation_fixed", |d| {
            interpolation_case(InterpolationMode::Fixed, d)
        })?,
        run("dense_interpolation_learnable", |d| {
            interpolation_case(InterpolationMode::Learnable, d)
        })?,
        run("lstm_step", lstm_case)?,
        run("gru_step", gru_case)?,
        run("fusion_head", fusion_case)?,
        run("matnet_mse", |d| full_model_case(toy.clone(), d))?,
        run("matnet_mse_fixed_interpolation", |d| {
            full_model_case(fixed.clone(), d)
        })?,
        run("bilstm_baseline_mse", |d| {
            full_model_case(bilstm.clone(), d)
        })?,
        run("gru_baseline_mse", |d| full_model_case(gru.clone(), d))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in gradient_suite().unwrap() {
            assert!(
                c.report.pass && c.report.checked > 0,
                "{}: max rel {:.3e}, failures {:?}",
                c.name,
                c.report.max_rel_error,
                &c.report.failures[..c.report.failures.len().min(5)]
            );
        }
    }
}
