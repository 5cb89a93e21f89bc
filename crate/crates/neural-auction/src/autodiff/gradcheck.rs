//! Finite-difference gradient verification.
//!
//! These helpers only evaluate the function being checked; they never touch
//! the tape internals, so they stay an independent oracle for the engine.

use thiserror::Error;

#[derive(Debug, Error)]
#[error(
    "gradient mismatch at index {index}: analytic {analytic}, numeric {numeric} \
     (rel tol {rel_tol}, abs tol {abs_tol})"
)]
pub struct GradCheckFailure {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

/// Central finite differences of a scalar function at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = f(&probe);
        probe[i] = x[i] - step;
        let lo = f(&probe);
        probe[i] = x[i];
        out.push((hi - lo) / (2.0 * step));
    }
    out
}

/// Accept when |a - n| <= max(abs_tol, rel_tol * max(|a|, |n|)).
pub fn within_tolerance(analytic: f64, numeric: f64, rel_tol: f64, abs_tol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_tol.max(rel_tol * analytic.abs().max(numeric.abs()))
}

/// Compare gradient vectors entrywise, reporting the first violation.
pub fn check_close(
    analytic: &[f64],
    numeric: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<(), GradCheckFailure> {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        if !within_tolerance(a, n, rel_tol, abs_tol) {
            return Err(GradCheckFailure { index: i, analytic: a, numeric: n, rel_tol, abs_tol });
        }
    }
    Ok(())
}
