//! Particle filter over local wall distance and direction.
//!
//! Each particle is a hypothesis `(d, θ)` for the nearest wall in the
//! robot's body frame. Prediction moves particles opposite to the robot's
//! motion and re-injects a fixed fraction uniformly (so the filter can
//! recover when the nearest wall changes); the update weighs particles by
//! the per-microphone path-difference posteriors; stratified resampling
//! keeps the set well-conditioned. Distance and angle moments summarize the
//! posterior for the mapping layer.

use crate::geometry::{normal_vec, reflected_path_length, wrap_two_pi, LocalPlane, MicGeometry};
use crate::pathdiff::PathDiffDistribution;
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Default particle count.
pub const DEFAULT_PARTICLES: usize = 400;

/// Default fraction of particles replaced by uniform draws per prediction.
pub const DEFAULT_INJECT_FRAC: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("need one path-difference distribution per microphone: {dists} vs {mics}")]
    DistributionCountMismatch { dists: usize, mics: usize },
    #[error("no path-difference distributions supplied")]
    NoDistributions,
}

/// Outcome of a weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    /// Weights updated and renormalized normally.
    Ok,
    /// All weights collapsed to zero; the set was reset to uniform.
    DegenerateReset,
}

/// One wall hypothesis: local distance, local normal angle, weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub d: f64,
    pub theta: f64,
    pub w: f64,
}

/// Relative motion between consecutive frames, as reported by odometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMotion {
    /// Translation `x_n − x_{n−1}` in the global frame.
    pub delta_xy: Vector2<f64>,
    /// Heading change `φ_n − φ_{n−1}`.
    pub delta_phi: f64,
    /// Absolute heading `φ_n` after the motion.
    pub heading: f64,
}

impl RelativeMotion {
    pub fn between(prev: &crate::geometry::Pose2, next: &crate::geometry::Pose2) -> Self {
        RelativeMotion {
            delta_xy: next.translation() - prev.translation(),
            delta_phi: crate::geometry::wrap_pi(next.phi - prev.phi),
            heading: next.phi,
        }
    }

    pub fn none() -> Self {
        RelativeMotion {
            delta_xy: Vector2::zeros(),
            delta_phi: 0.0,
            heading: 0.0,
        }
    }
}

/// Weighted particle population over `(d, θ)`, plus its RNG.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub d_max: f64,
    rng: ChaCha8Rng,
}

/// Posterior summary: weighted mean and spread of distance and angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallEstimate {
    pub d_mean: f64,
    pub theta_mean: f64,
    pub sigma_d: f64,
    pub sigma_theta: f64,
}

/// Uniform initialization: `d ~ U[0, d_max]`, `θ ~ U[0, 2π)`, equal weights.
pub fn init_particles(n: usize, d_max: f64, seed: u64) -> ParticleSet {
    assert!(n >= 1, "particle filter needs at least one particle");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = 1.0 / n as f64;
    let particles = (0..n)
        .map(|_| Particle {
            d: rng.random_range(0.0..=d_max),
            theta: rng.random_range(0.0..TAU),
            w,
        })
        .collect();
    ParticleSet {
        particles,
        d_max,
        rng,
    }
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.particles.iter().map(|p| p.w * p.w).sum::<f64>()
    }
}

/// Move every particle to the new body frame:
/// `d ← d − n(θ + φ_n)ᵀ (x_n − x_{n−1})`, `θ ← θ − Δφ`, distance clamped to
/// `[0, d_max]`; then replace a uniformly chosen `inject_frac` of the
/// population with fresh uniform hypotheses (weights stay in their slots).
pub fn predict(ps: &mut ParticleSet, motion: &RelativeMotion, inject_frac: f64) {
    for p in &mut ps.particles {
        let n_vec = normal_vec(p.theta + motion.heading);
        p.d = (p.d - n_vec.dot(&motion.delta_xy)).clamp(0.0, ps.d_max);
        p.theta = wrap_two_pi(p.theta - motion.delta_phi);
    }
    let n = ps.particles.len();
    let n_inject = ((inject_frac * n as f64).round() as usize).min(n);
    if n_inject == 0 {
        return;
    }
    let slots = rand::seq::index::sample(&mut ps.rng, n, n_inject);
    for idx in slots {
        let p = &mut ps.particles[idx];
        p.d = ps.rng.random_range(0.0..=ps.d_max);
        p.theta = ps.rng.random_range(0.0..TAU);
    }
}

/// Reweight particles by the product of per-microphone probabilities of the
/// particle's implied path differences, then renormalize. A total collapse
/// resets the weights to uniform and reports it.
pub fn update_weights(
    ps: &mut ParticleSet,
    dists: &[PathDiffDistribution],
    mics: &MicGeometry,
) -> Result<UpdateStatus, FilterError> {
    if dists.is_empty() {
        return Err(FilterError::NoDistributions);
    }
    if dists.len() != mics.len() {
        return Err(FilterError::DistributionCountMismatch {
            dists: dists.len(),
            mics: mics.len(),
        });
    }
    for p in &mut ps.particles {
        let local = LocalPlane::new(p.d, p.theta);
        let mut likelihood = 1.0;
        for (m, dist) in dists.iter().enumerate() {
            let delta = reflected_path_length(mics.ell(m), mics.bearing(m), &local) - mics.ell(m);
            likelihood *= dist.interpolate(delta);
        }
        p.w *= likelihood;
    }
    let total: f64 = ps.particles.iter().map(|p| p.w).sum();
    if total <= 0.0 || !total.is_finite() {
        let w = 1.0 / ps.particles.len() as f64;
        for p in &mut ps.particles {
            p.w = w;
        }
        return Ok(UpdateStatus::DegenerateReset);
    }
    for p in &mut ps.particles {
        p.w /= total;
    }
    Ok(UpdateStatus::Ok)
}

/// Stratified resampling: one uniform draw per stratum `[i/N, (i+1)/N)`,
/// walked against the weight CDF. Output weights are reset to `1/N`.
pub fn resample_stratified(ps: &mut ParticleSet, seed: u64) {
    let n = ps.particles.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut cumulative = ps.particles[0].w;
    let mut j = 0;
    let w_new = 1.0 / n as f64;
    for i in 0..n {
        let u = (i as f64 + rng.random_range(0.0..1.0)) / n as f64;
        while cumulative < u && j + 1 < n {
            j += 1;
            cumulative += ps.particles[j].w;
        }
        out.push(Particle {
            w: w_new,
            ..ps.particles[j]
        });
    }
    ps.particles = out;
}

/// Weighted posterior moments: linear mean/std for distance, circular
/// mean/std for the angle (σ_θ = √(−2 ln R), capped at π).
pub fn estimate_moments(ps: &ParticleSet) -> WallEstimate {
    let d_mean: f64 = ps.particles.iter().map(|p| p.w * p.d).sum();
    let d_var: f64 = ps
        .particles
        .iter()
        .map(|p| p.w * (p.d - d_mean) * (p.d - d_mean))
        .sum();
    let c: f64 = ps.particles.iter().map(|p| p.w * p.theta.cos()).sum();
    let s: f64 = ps.particles.iter().map(|p| p.w * p.theta.sin()).sum();
    let theta_mean = wrap_two_pi(s.atan2(c));
    let r = (c * c + s * s).sqrt().min(1.0);
    let sigma_theta = if r <= 0.0 {
        PI
    } else {
        (-2.0 * r.ln()).sqrt().min(PI)
    };
    WallEstimate {
        d_mean,
        theta_mean,
        sigma_d: d_var.max(0.0).sqrt(),
        sigma_theta,
    }
}
