//! Forecast scoring: error metrics, per-day reports, the Diebold–Mariano
//! test, branch ablation and plot data.

pub mod ablation;
pub mod dm;
pub mod metrics;
pub mod plot;

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};

pub use ablation::{
    ablate_forward, ablated_predictions, ablation_table, write_ablation_csv, AblationRow,
    AblationSpec,
};
pub use dm::{diebold_mariano, DmLoss, DmOutcome};
pub use metrics::{
    mae, mase, metrics_report, rank_days, rmse, summary_header, summary_row, wmape, DayMetrics,
    Metrics, MetricsReport, RankBy,
};
pub use plot::{export_plot_data, plot_rows, write_plot_csv, PlotRow};

use crate::data::SampleWindow;
use crate::error::{Error, Result};
use crate::model::Model;

/// Predictions next to their targets for a set of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecasts {
    pub days: Vec<NaiveDate>,
    pub predictions: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Forecasts {
    pub fn compute(model: &Model, samples: &[SampleWindow], spec: AblationSpec) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("no windows to evaluate".into()));
        }
        Ok(Forecasts {
            days: samples.iter().map(|s| s.day).collect(),
            predictions: ablated_predictions(model, samples, spec)?,
            targets: samples.iter().map(|s| s.target.clone()).collect(),
        })
    }

    pub fn report(&self, daylight_only: bool) -> Result<MetricsReport> {
        metrics_report(&self.predictions, &self.targets, &self.days, daylight_only)
    }

    /// Flattened forecast errors `ŷ − y`, in window order.
    pub fn errors(&self) -> Vec<f64> {
        self.predictions
            .iter()
            .zip(&self.targets)
            .flat_map(|(p, y)| p.iter().zip(y).map(|(a, b)| a - b))
            .collect()
    }

    /// Plot rows for `day`, with the previous day's actuals when that day is
    /// also among the forecasts.
    pub fn plot(&self, day: NaiveDate) -> Result<Vec<PlotRow>> {
        let index: BTreeMap<NaiveDate, usize> =
            self.days.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let i = *index
            .get(&day)
            .ok_or_else(|| Error::Data(format!("day {day} is not among the evaluated days")))?;
        let prev = index
            .get(&(day - Duration::days(1)))
            .map(|&j| self.targets[j].as_slice());
        if prev.is_none() {
            log::warn!("no previous-day actuals for {day}; leaving that column empty");
        }
        plot_rows(&self.targets[i], &self.predictions[i], prev)
    }
}
