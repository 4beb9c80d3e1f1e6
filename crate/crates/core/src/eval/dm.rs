//! Diebold–Mariano test for equal predictive accuracy.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DM_MIN_LEN: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DmLoss {
    Squared,
    Absolute,
}

impl DmLoss {
    fn apply(self, e: f64) -> f64 {
        match self {
            DmLoss::Squared => e * e,
            DmLoss::Absolute => e.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DmOutcome {
    /// `None` when the loss differential has zero variance.
    pub statistic: Option<f64>,
    /// Two-sided normal p-value; 1 for the degenerate case.
    pub p_value: f64,
    pub loss: DmLoss,
    /// Highest autocovariance lag included (`h − 1`).
    pub lag: usize,
    /// The long-run variance estimate was non-positive and the lag-0
    /// variance was used instead.
    pub variance_fallback: bool,
}

/// Compares forecast errors `a` and `b` over horizon `h`. Positive
/// statistics mean `a` has the larger loss.
pub fn diebold_mariano(a: &[f64], b: &[f64], loss: DmLoss, h: usize) -> Result<DmOutcome> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "error series differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < DM_MIN_LEN {
        return Err(Error::Contract(format!(
            "Diebold-Mariano needs at least {DM_MIN_LEN} points, got {n}"
        )));
    }
    if h == 0 || h > n {
        return Err(Error::Contract(format!("horizon {h} outside 1..={n}")));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| loss.apply(*x) - loss.apply(*y))
        .collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let autocov = |k: usize| -> f64 {
        centered[k..]
            .iter()
            .zip(&centered)
            .map(|(x, y)| x * y)
            .sum::<f64>()
            / nf
    };
    let gamma0 = autocov(0);
    let lag = h - 1;
    if gamma0 == 0.0 {
        return Ok(DmOutcome {
            statistic: None,
            p_value: 1.0,
            loss,
            lag,
            variance_fallback: false,
        });
    }
    let mut long_run = gamma0 + 2.0 * (1..=lag).map(autocov).sum::<f64>();
    let variance_fallback = long_run <= 0.0;
    if variance_fallback {
        log::warn!("non-positive long-run variance {long_run:e}; using lag-0 variance");
        long_run = gamma0;
    }
    let stat = mean / (long_run / nf).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = (2.0 * normal.sf(stat.abs())).clamp(0.0, 1.0);
    Ok(DmOutcome {
        statistic: Some(stat),
        p_value,
        loss,
        lag,
        variance_fallback,
    })
}
