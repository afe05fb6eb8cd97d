//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_error: f64,
    /// Flat index attaining `max_rel_error`.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn scalar_value<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = f(&mut tape, xv)?;
    tape.value(out).item()
}

/// Relative error used by the checker; the denominator is floored at 1e-8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` at `x` against central differences
/// on the listed flat coordinates.
pub fn grad_check_coords<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(xv).expect("leaf registered as param");

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = x.clone();
    for &i in coords {
        if i >= x.numel() {
            return Err(shape_err!("coordinate {i} out of range for {}", x.shape()));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = scalar_value(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = scalar_value(&f, &probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Maximum relative error between the tape gradient and central differences
/// over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    Ok(grad_check_coords(f, x, eps, &coords)?.max_rel_error)
}
