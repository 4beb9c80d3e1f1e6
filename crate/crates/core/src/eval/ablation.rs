//! Branch ablation by zero-replacement of whole input modalities.

use std::io::Write;

use super::metrics::{metrics_report, Metrics};
use crate::data::{BranchInputs, SampleWindow};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AblationSpec {
    pub enable_pv: bool,
    pub enable_hw: bool,
    pub enable_fw: bool,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self::ALL
    }
}

impl AblationSpec {
    pub const ALL: AblationSpec = AblationSpec::new(true, true, true);

    pub const fn new(enable_pv: bool, enable_hw: bool, enable_fw: bool) -> Self {
        AblationSpec {
            enable_pv,
            enable_hw,
            enable_fw,
        }
    }

    /// The seven non-empty branch subsets: single branches, then pairs,
    /// then all three.
    pub fn combinations() -> [AblationSpec; 7] {
        [
            Self::new(true, false, false),
            Self::new(false, true, false),
            Self::new(false, false, true),
            Self::new(true, true, false),
            Self::new(true, false, true),
            Self::new(false, true, true),
            Self::ALL,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.enable_pv || self.enable_hw || self.enable_fw {
            Ok(())
        } else {
            Err(Error::Config(
                "ablation must leave at least one branch enabled".into(),
            ))
        }
    }

    /// Copy of `inputs` with disabled branches replaced by zeros.
    pub fn apply(&self, inputs: &BranchInputs) -> BranchInputs {
        let keep = |on: bool, t: &Tensor| {
            if on {
                t.clone()
            } else {
                Tensor::zeros(t.shape())
            }
        };
        BranchInputs {
            pv: keep(self.enable_pv, &inputs.pv),
            hw: keep(self.enable_hw, &inputs.hw),
            fw: keep(self.enable_fw, &inputs.fw),
        }
    }
}

pub fn ablate_forward(
    model: &Model,
    inputs: &BranchInputs,
    spec: AblationSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    model.predict(&spec.apply(inputs))
}

/// Eval-mode predictions for every sample under `spec`.
pub fn ablated_predictions(
    model: &Model,
    samples: &[SampleWindow],
    spec: AblationSpec,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let inputs: Vec<BranchInputs> = samples.iter().map(|s| spec.apply(&s.inputs)).collect();
    model.predict_batch(&inputs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub spec: AblationSpec,
    pub metrics: Metrics,
}

/// Pooled metrics for each of the seven branch combinations.
pub fn ablation_table(
    model: &Model,
    samples: &[SampleWindow],
    daylight_only: bool,
) -> Result<Vec<AblationRow>> {
    let targets: Vec<Vec<f64>> = samples.iter().map(|s| s.target.clone()).collect();
    let days: Vec<_> = samples.iter().map(|s| s.day).collect();
    AblationSpec::combinations()
        .into_iter()
        .map(|spec| {
            let preds = ablated_predictions(model, samples, spec)?;
            let report = metrics_report(&preds, &targets, &days, daylight_only)?;
            Ok(AblationRow {
                spec,
                metrics: report.pooled,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut w: W) -> std::io::Result<()> {
    let mark = |on: bool| if on { "on" } else { "off" };
    writeln!(w, "pv,hw,fw,rmse,mae,wmape,mase")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            mark(r.spec.enable_pv),
            mark(r.spec.enable_hw),
            mark(r.spec.enable_fw),
            m.rmse,
            m.mae,
            m.wmape,
            m.mase
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            step_in: 5,
            step_out: 5,
            interp_factor: 5,
            weather_width: 3,
            ..ModelConfig::toy()
        }
    }

    fn fill(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen())
    }

    #[test]
    fn disabled_branch_is_ignored() {
        let model = Model::new(cfg(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let base = BranchInputs {
            pv: fill(&[5, 1], 1),
            hw: fill(&[5, 3], 2),
            fw: fill(&[5, 3], 3),
        };
        let spec = AblationSpec::new(false, true, true);
        let other = BranchInputs {
            pv: fill(&[5, 1], 99),
            ..base.clone()
        };
        assert_eq!(
            ablate_forward(&model, &base, spec).unwrap(),
            ablate_forward(&model, &other, spec).unwrap()
        );
        assert_eq!(
            ablate_forward(&model, &base, AblationSpec::ALL).unwrap(),
            model.predict(&base).unwrap()
        );
        assert!(matches!(
            ablate_forward(&model, &base, AblationSpec::new(false, false, false)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seven_distinct_nonempty_combinations() {
        let all = AblationSpec::combinations();
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 7);
        assert!(all.iter().all(|s| s.validate().is_ok()));
        assert_eq!(all[6], AblationSpec::ALL);
    }
}
