//! Path-difference inference from normalized magnitude spectra.
//!
//! A wall echo at path difference `Δ` imprints `cos(2πfΔ/c)` on the
//! normalized spectrum, so `Δ` estimation is spectral estimation over the
//! (non-uniform) sweep frequencies. The periodogram doubles as the
//! sufficient statistic of a Students-t-style posterior over `Δ`: the
//! resulting distribution feeds the particle filter without committing to
//! a point estimate.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Hard clip on the usable wall-distance range, in meters.
pub const MAX_WALL_DISTANCE: f64 = 0.80;

/// Default number of grid points for the path-difference posterior.
pub const DEFAULT_GRID_POINTS: usize = 512;

/// Floor for the periodogram bracket `1 − 2P/Σŷ²` before exponentiation;
/// keeps the peak finite and normalizable.
const BRACKET_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum PathDiffError {
    #[error("need at least {need} frequencies, got {got}")]
    TooFewFrequencies { need: usize, got: usize },
    #[error("values and frequencies differ in length: {values} vs {freqs}")]
    LengthMismatch { values: usize, freqs: usize },
    #[error("grid of {n_grid} points undersamples {n_freqs} frequencies (need ≥ 2×)")]
    GridTooCoarse { n_grid: usize, n_freqs: usize },
}

/// Uniform grid of candidate path differences from 0 to the maximal
/// resolvable `Δ_max = c / (2 δ_f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaGrid {
    values: Vec<f64>,
}

impl DeltaGrid {
    /// Grid matched to a frequency band: `Δ_max` from the mean spacing of
    /// `freqs`, `n` points. Requires `n ≥ 2 · len(freqs)` so peak
    /// quantization stays below the frequency resolution.
    pub fn for_band(freqs: &[f64], c: f64, n: usize) -> Result<Self, PathDiffError> {
        if freqs.len() < 2 {
            return Err(PathDiffError::TooFewFrequencies {
                need: 2,
                got: freqs.len(),
            });
        }
        if n < 2 * freqs.len() {
            return Err(PathDiffError::GridTooCoarse {
                n_grid: n,
                n_freqs: freqs.len(),
            });
        }
        let spacing = (freqs[freqs.len() - 1] - freqs[0]) / (freqs.len() - 1) as f64;
        let delta_max = c / (2.0 * spacing);
        Ok(DeltaGrid {
            values: (0..n)
                .map(|i| delta_max * i as f64 / (n - 1) as f64)
                .collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid spacing in meters.
    pub fn step(&self) -> f64 {
        self.values[1] - self.values[0]
    }

    /// Largest resolvable path difference.
    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Discrete probability distribution over a [`DeltaGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDiffDistribution {
    pub grid: DeltaGrid,
    pub probs: Vec<f64>,
}

impl PathDiffDistribution {
    /// Uniform distribution over the grid (the no-information state).
    pub fn uniform(grid: DeltaGrid) -> Self {
        let n = grid.len();
        PathDiffDistribution {
            grid,
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Probability at an arbitrary `Δ` by linear interpolation, clamped to
    /// the edge values outside the grid. Clamping (rather than zeroing)
    /// keeps a uniform distribution uninformative for any query point.
    pub fn interpolate(&self, delta: f64) -> f64 {
        let vals = self.grid.values();
        let n = vals.len();
        if delta <= vals[0] {
            return self.probs[0];
        }
        if delta >= vals[n - 1] {
            return self.probs[n - 1];
        }
        let pos = (delta - vals[0]) / self.grid.step();
        let i = (pos.floor() as usize).min(n - 2);
        let frac = pos - i as f64;
        self.probs[i] * (1.0 - frac) + self.probs[i + 1] * frac
    }

    /// Index of the most probable grid point.
    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("distribution is never empty")
    }
}

/// Periodogram of `y_hat` over the grid:
/// `P(Δ) = (1/N_f) |Σ_k ŷ(f_k) exp(j2π (Δ/c) f_k)|²`, evaluated as a
/// direct non-uniform transform at each grid point.
pub fn periodogram(
    y_hat: &[f64],
    freqs: &[f64],
    grid: &DeltaGrid,
    c: f64,
) -> Result<Vec<f64>, PathDiffError> {
    if y_hat.len() != freqs.len() {
        return Err(PathDiffError::LengthMismatch {
            values: y_hat.len(),
            freqs: freqs.len(),
        });
    }
    if freqs.len() < 2 {
        return Err(PathDiffError::TooFewFrequencies {
            need: 2,
            got: freqs.len(),
        });
    }
    let n_f = freqs.len() as f64;
    Ok(grid
        .values()
        .iter()
        .map(|&delta| {
            let (mut re, mut im) = (0.0, 0.0);
            for (&y, &f) in y_hat.iter().zip(freqs) {
                let phase = 2.0 * PI * delta / c * f;
                re += y * phase.cos();
                im += y * phase.sin();
            }
            (re * re + im * im) / n_f
        })
        .collect())
}

/// Posterior over path difference:
/// `p(Δ) ∝ [1 − 2P(Δ)/Σ_k ŷ(f_k)²]^{(2−N_f)/2}`, normalized over the grid.
///
/// The bracket is floored at 1e−10 before exponentiation and the powers are
/// evaluated in log space, so the sharply peaked posterior stays finite and
/// exactly scale-invariant in `ŷ`. All-zero input returns the uniform
/// distribution by convention.
pub fn delta_distribution(
    y_hat: &[f64],
    freqs: &[f64],
    grid: &DeltaGrid,
    c: f64,
) -> Result<PathDiffDistribution, PathDiffError> {
    if freqs.len() < 3 {
        return Err(PathDiffError::TooFewFrequencies {
            need: 3,
            got: freqs.len(),
        });
    }
    let power = periodogram(y_hat, freqs, grid, c)?;
    let energy: f64 = y_hat.iter().map(|y| y * y).sum();
    if energy <= 0.0 {
        return Ok(PathDiffDistribution::uniform(grid.clone()));
    }
    let exponent = (2.0 - freqs.len() as f64) / 2.0;
    let log_p: Vec<f64> = power
        .iter()
        .map(|&p| exponent * (1.0 - 2.0 * p / energy).max(BRACKET_FLOOR).ln())
        .collect();
    let max_lp = log_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max_lp + log_p.iter().map(|lp| (lp - max_lp).exp()).sum::<f64>().ln();
    let probs = log_p.iter().map(|lp| (lp - log_norm).exp()).collect();
    Ok(PathDiffDistribution {
        grid: grid.clone(),
        probs,
    })
}

/// Particle-filter range bound: the wall distance at which a collinear
/// microphone's path difference hits the grid limit,
/// `min(ℓ_max + c/(4δ_f), 0.80 m)`.
pub fn max_distance(
    freqs: &[f64],
    mics: &crate::geometry::MicGeometry,
    c: f64,
) -> Result<f64, PathDiffError> {
    if freqs.len() < 2 {
        return Err(PathDiffError::TooFewFrequencies {
            need: 2,
            got: freqs.len(),
        });
    }
    let spacing = (freqs[freqs.len() - 1] - freqs[0]) / (freqs.len() - 1) as f64;
    Ok((mics.max_ell() + c / (4.0 * spacing)).min(MAX_WALL_DISTANCE))
}
