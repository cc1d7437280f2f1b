//! Central finite-difference gradient checks in f64.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub h: f64,
    /// Lower bound on the relative-error denominator, so near-zero gradients compare absolutely.
    pub floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions { h: 1e-5, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// `max_i |a_i − n_i| / max(|a_i|, |n_i|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the worst relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares `analytic` with central differences of `f` at every coordinate of `x`.
pub fn fd_check(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], opts: FdOptions) -> Result<FdReport> {
    let all: Vec<usize> = (0..x.len()).collect();
    fd_check_at(f, x, analytic, &all, opts)
}

/// As [`fd_check`], restricted to the given coordinates.
pub fn fd_check_at(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    opts: FdOptions,
) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&opts.h) {
        return Err(Error::InvalidArgument(format!("step {} outside [1e-7, 1e-3]", opts.h)));
    }
    if x.len() != analytic.len() {
        return Err(Error::shape(format!("{} gradient entries", x.len()), format!("{}", analytic.len())));
    }
    if let Some(i) = indices.iter().find(|&&i| i >= x.len()) {
        return Err(Error::InvalidArgument(format!("coordinate {i} out of range")));
    }
    if x.iter().chain(analytic).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("finite-difference inputs".into()));
    }
    let mut report = FdReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = x.to_vec();
    for &i in indices {
        probe[i] = x[i] + opts.h;
        let up = f(&probe);
        probe[i] = x[i] - opts.h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("function value near coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * opts.h);
        let a = analytic[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact_to_rounding() {
        let w = [0.5, -2.0, 3.25];
        let f = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let r = fd_check(f, &[0.1, 0.2, 0.3], &w, FdOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let f = |x: &[f64]| x[0].sin() + x[1] * x[1];
        let x = [0.3, -0.7];
        let good = [0.3f64.cos(), -1.4];
        let bad: Vec<f64> = good.iter().map(|g| g * 1.01).collect();
        assert!(fd_check(f, &x, &good, FdOptions::default()).unwrap().max_rel_error < 1e-8);
        let r = fd_check(f, &x, &bad, FdOptions::default()).unwrap();
        assert!(r.max_rel_error > 0.009, "{r:?}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let f = |x: &[f64]| x[0];
        assert!(fd_check(f, &[0.0], &[1.0], FdOptions { h: 1e-2, floor: 1e-6 }).is_err());
        assert!(matches!(
            fd_check(f, &[f64::NAN], &[1.0], FdOptions::default()),
            Err(Error::NonFinite(_))
        ));
        assert!(fd_check(|x: &[f64]| x[0].ln(), &[0.0], &[1.0], FdOptions::default()).is_err());
    }
}
