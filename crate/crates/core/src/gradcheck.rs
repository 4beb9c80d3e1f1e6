//! Central finite-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::Tensor;

/// Absolute error that always passes. Relative errors are taken against
/// `max(|analytic|, |numeric|, ABS_ERROR_FLOOR / tol)`, so gradients too
/// small to measure relatively are held to this absolute bound instead.
pub const ABS_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Flat indices (or `name[index]` labels) of failing elements.
    pub failures: Vec<String>,
    pub pass: bool,
}

#[derive(Default)]
struct Accumulator {
    max_rel: f64,
    max_abs: f64,
    checked: usize,
    failures: Vec<String>,
}

impl Accumulator {
    fn observe(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64, tol: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(ABS_ERROR_FLOOR / tol);
        self.max_abs = self.max_abs.max(abs);
        self.max_rel = self.max_rel.max(rel);
        self.checked += 1;
        if rel > tol {
            self.failures.push(label());
        }
    }

    fn finish(self) -> GradcheckReport {
        GradcheckReport {
            max_rel_error: self.max_rel,
            max_abs_error: self.max_abs,
            checked: self.checked,
            pass: self.failures.is_empty(),
            failures: self.failures,
        }
    }
}

/// Compares a supplied gradient against `(f(x+ε·e) − f(x−ε·e)) / 2ε`.
pub fn compare_gradient(
    f: impl Fn(&Tensor) -> Result<f64>,
    analytic: &Tensor,
    point: &Tensor,
    eps: f64,
    tol: f64,
) -> Result<GradcheckReport> {
    if analytic.shape() != point.shape() {
        return Err(Error::dim("gradcheck", analytic.shape(), point.shape()));
    }
    let mut acc = Accumulator::default();
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = x0 - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (up - down) / (2.0 * eps);
        acc.observe(|| i.to_string(), analytic.data()[i], numeric, tol);
    }
    Ok(acc.finish())
}

/// Checks the tape gradient of a scalar function of one tensor.
pub fn gradcheck<F>(f: F, point: &Tensor, eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad(x).cloned().expect("param has grad");
    let value = |p: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(p.clone());
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).item())
    };
    compare_gradient(value, &analytic, point, eps, tol)
}

/// Checks the tape gradient of a scalar function with respect to every
/// element of every parameter in `store`.
pub fn gradcheck_params<F>(store: &ParamStore, f: F, eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, true);
    let y = f(&mut tape, &bound)?;
    tape.backward(y)?;
    let analytic: BTreeMap<String, Tensor> = bound.gradients(&tape);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let y = f(&mut tape, &bound)?;
        Ok(tape.value(y).item())
    };

    let mut acc = Accumulator::default();
    let mut probe = store.clone();
    for (name, grad) in &analytic {
        for i in 0..grad.len() {
            let x0 = store.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = x0 + eps;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = x0 - eps;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * eps);
            acc.observe(|| format!("{name}[{i}]"), grad.data()[i], numeric, tol);
        }
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_sq(tape: &mut Tape, x: Var) -> Result<Var> {
        let sq = tape.mul(x, x)?;
        Ok(tape.sum(sq))
    }

    #[test]
    fn sum_of_squares_passes() {
        let p = Tensor::vector(vec![0.3, -1.2, 2.5, 0.0]);
        let r = gradcheck(sum_sq, &p, 1e-5, 1e-4).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let p = Tensor::vector(vec![0.3, -1.2, 2.5]);
        let wrong = Tensor::vector(p.data().iter().map(|x| 2.0 * x * 1.01).collect());
        let f = |t: &Tensor| Ok(t.data().iter().map(|x| x * x).sum());
        let r = compare_gradient(f, &wrong, &p, 1e-5, 1e-4).unwrap();
        assert!(!r.pass);
        assert!(r.max_rel_error > 5e-3);
    }

    #[test]
    fn constant_function_passes() {
        let p = Tensor::vector(vec![1.0, 2.0]);
        let r = gradcheck(
            |tape, x| {
                let z = tape.scale(x, 0.0);
                let s = tape.sum(z);
                Ok(tape.affine(s, 1.0, 4.0))
            },
            &p,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.pass);
        assert_eq!(r.max_abs_error, 0.0);
    }
}
