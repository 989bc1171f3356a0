//! Shared test oracles, compiled only for unit tests.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// Least-squares residual norm of fitting `values` over `freqs` to the
/// given design matrix, via SVD (tolerates rank-deficient designs, e.g. a
/// sine column at Δ = 0).
fn lstsq_residual(design: DMatrix<f64>, values: &[f64]) -> f64 {
    let y = DVector::from_column_slice(values);
    let svd = design.clone().svd(true, true);
    let coeffs = svd.solve(&y, 1e-12).expect("SVD solve is infallible here");
    (design * coeffs - y).norm()
}

/// Least-squares fit of `values` over `freqs` to
/// `A + B cos(2πfΔ/c) + C sin(2πfΔ/c)` at a fixed `delta`; returns the
/// residual norm. Brute-force oracle for the interference shape.
pub(crate) fn cosine_fit_residual(freqs: &[f64], values: &[f64], delta: f64, c: f64) -> f64 {
    let n = freqs.len();
    let mut design = DMatrix::zeros(n, 3);
    for (i, &f) in freqs.iter().enumerate() {
        let arg = 2.0 * PI * f * delta / c;
        design[(i, 0)] = 1.0;
        design[(i, 1)] = arg.cos();
        design[(i, 2)] = arg.sin();
    }
    lstsq_residual(design, values)
}

/// Residual of the two-parameter fit `B cos(2πfΔ/c) + C sin(2πfΔ/c)` — a
/// cosine with amplitude and phase free, no constant term. This is the
/// least-squares problem whose marginalized solution the periodogram
/// approximates.
pub(crate) fn phase_free_cosine_residual(freqs: &[f64], values: &[f64], delta: f64, c: f64) -> f64 {
    let n = freqs.len();
    let mut design = DMatrix::zeros(n, 2);
    for (i, &f) in freqs.iter().enumerate() {
        let arg = 2.0 * PI * f * delta / c;
        design[(i, 0)] = arg.cos();
        design[(i, 1)] = arg.sin();
    }
    lstsq_residual(design, values)
}
