//! Central finite-difference gradient checking.
//!
//! The oracle only ever evaluates the forward function, so it is
//! independent of the backward rules it checks.

pub mod suite;

use crate::error::Result;
use crate::tensor::{tape, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all checked entries.
    pub max_rel_err: f64,
    /// (parameter index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the backward-pass gradient of the scalar `loss` with respect to
/// every entry of `params` against `(f(x + h) - f(x - h)) / 2h`.
///
/// `loss` must be deterministic (no dropout, no batch-order effects).
pub fn check_gradients<F>(params: &[Tensor], loss: F, h: f64, floor: f64) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    tape::clear();
    params.iter().for_each(Tensor::zero_grad);
    let root = loss()?;
    root.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    tape::no_grad(|| -> Result<()> {
        for (pi, p) in params.iter().enumerate() {
            for ei in 0..p.numel() {
                let orig = p.data()[ei];
                p.update_data(|d| d[ei] = orig + h);
                let plus = loss()?.item();
                p.update_data(|d| d[ei] = orig - h);
                let minus = loss()?.item();
                p.update_data(|d| d[ei] = orig);
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[pi][ei];
                let err = rel_err(a, numeric, floor);
                report.checked += 1;
                if err > report.max_rel_err {
                    report.max_rel_err = err;
                    report.worst = (pi, ei);
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
        Ok(())
    })?;
    params.iter().for_each(Tensor::zero_grad);
    Ok(report)
}
