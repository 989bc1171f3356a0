//! Planar geometry of source, microphones, poses, and wall planes.
//!
//! The robot body frame has its origin at the sound source. Walls are
//! parametrized by their distance and normal angle from the frame origin,
//! either in the fixed global frame or as seen from a pose. The forward
//! relation gives the reflected path length off a wall (image-source
//! geometry); the inverse recovers wall distance from a path length at a
//! fixed angle.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Errors produced by geometry constructors.
#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("microphone array must contain at least one microphone")]
    EmptyMicArray,
    #[error("global plane distance must be nonnegative, got {0}")]
    NegativePlaneDistance(f64),
}

/// Normalize an angle into `[0, 2π)`.
pub fn wrap_two_pi(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Wrap an angle difference into `(-π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Unit normal vector with direction `theta`: `(cos θ, sin θ)`.
pub fn normal_vec(theta: f64) -> Vector2<f64> {
    Vector2::new(theta.cos(), theta.sin())
}

/// Derivative of [`normal_vec`] with respect to its angle: `(-sin θ, cos θ)`.
pub fn normal_vec_deriv(theta: f64) -> Vector2<f64> {
    Vector2::new(-theta.sin(), theta.cos())
}

/// SE(2) robot pose: translation in meters, heading in radians.
///
/// The heading is kept normalized to `[0, 2π)`. Tangent vectors are ordered
/// `(x, y, φ)` with the translational part expressed in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Pose2 {
            x,
            y,
            phi: wrap_two_pi(phi),
        }
    }

    pub fn identity() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            phi: 0.0,
        }
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.phi.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Group composition `self ∘ other`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.phi.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.phi + other.phi,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.phi.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            -(-s * self.x + c * self.y),
            -self.phi,
        )
    }

    /// Map a point from the body frame into the global frame.
    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * p + self.translation()
    }
}

/// SE(2) exponential map. `tau` is `(x, y, φ)` in tangent coordinates.
pub fn se2_exp(tau: &Vector3<f64>) -> Pose2 {
    let phi = tau.z;
    // V matrix entries; series below 1e-6 avoids the sin φ / φ division.
    let (a, b) = if phi.abs() < 1e-6 {
        (1.0 - phi * phi / 6.0, 0.5 * phi - phi * phi * phi / 24.0)
    } else {
        (phi.sin() / phi, (1.0 - phi.cos()) / phi)
    };
    Pose2::new(a * tau.x - b * tau.y, b * tau.x + a * tau.y, phi)
}

/// SE(2) logarithm map, with the rotation wrapped to `(-π, π]`.
pub fn se2_log(pose: &Pose2) -> Vector3<f64> {
    let phi = wrap_pi(pose.phi);
    let (a, b) = if phi.abs() < 1e-6 {
        (1.0 - phi * phi / 12.0, 0.5 * phi)
    } else {
        let half = 0.5 * phi;
        (half * (half.cos() / half.sin()), half)
    };
    Vector3::new(a * pose.x + b * pose.y, -b * pose.x + a * pose.y, phi)
}

/// Retraction `b ⊕ τ = b ∘ exp(τ)`.
pub fn pose_oplus(b: &Pose2, tau: &Vector3<f64>) -> Pose2 {
    b.compose(&se2_exp(tau))
}

/// Lie-algebra difference `a ⊖ b = log(b⁻¹ ∘ a)`.
pub fn pose_ominus(a: &Pose2, b: &Pose2) -> Vector3<f64> {
    se2_log(&b.inverse().compose(a))
}

/// Inverse right Jacobian of SE(2) at tangent vector `tau`.
///
/// Computed from the adjoint series `Jr(τ) = Σ (-ad)^k / (k+1)!` and a 3x3
/// inverse; converges to machine precision for the pose magnitudes handled
/// here (|φ| ≤ π, desk-scale translations).
pub fn se2_right_jacobian_inv(tau: &Vector3<f64>) -> Matrix3<f64> {
    let ad = Matrix3::new(0.0, -tau.z, tau.y, tau.z, 0.0, -tau.x, 0.0, 0.0, 0.0);
    let mut jr = Matrix3::identity();
    let mut term = Matrix3::identity();
    for k in 1..=30 {
        term = term * (-ad) / (k as f64 + 1.0);
        jr += term;
        if term.norm() < 1e-18 {
            break;
        }
    }
    jr.try_inverse()
        .expect("right Jacobian is invertible for |phi| <= pi")
}

/// Microphone array in the body frame (origin at the sound source).
///
/// Stores each microphone's direct path length `ℓ` and bearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicGeometry {
    positions: Vec<Vector2<f64>>,
    ells: Vec<f64>,
    bearings: Vec<f64>,
}

impl MicGeometry {
    pub fn new(positions: Vec<Vector2<f64>>) -> Result<Self, GeometryError> {
        if positions.is_empty() {
            return Err(GeometryError::EmptyMicArray);
        }
        let ells = positions.iter().map(|p| p.norm()).collect();
        let bearings = positions
            .iter()
            .map(|p| wrap_two_pi(p.y.atan2(p.x)))
            .collect();
        Ok(MicGeometry {
            positions,
            ells,
            bearings,
        })
    }

    pub fn from_coords(coords: &[[f64; 2]]) -> Result<Self, GeometryError> {
        Self::new(coords.iter().map(|c| Vector2::new(c[0], c[1])).collect())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector2<f64>] {
        &self.positions
    }

    /// Direct path length `ℓ` of microphone `m`.
    pub fn ell(&self, m: usize) -> f64 {
        self.ells[m]
    }

    /// Bearing of microphone `m` in `[0, 2π)`.
    pub fn bearing(&self, m: usize) -> f64 {
        self.bearings[m]
    }

    pub fn max_ell(&self) -> f64 {
        self.ells.iter().cloned().fold(0.0, f64::max)
    }

    /// Restrict the array to its first `k` microphones.
    pub fn take(&self, k: usize) -> Result<Self, GeometryError> {
        Self::new(self.positions.iter().take(k).cloned().collect())
    }
}

/// Wall plane in the global frame: distance `d ≥ 0` and normal angle from
/// the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneParams {
    pub d: f64,
    pub theta: f64,
}

impl PlaneParams {
    pub fn new(d: f64, theta: f64) -> Result<Self, GeometryError> {
        if d < 0.0 {
            return Err(GeometryError::NegativePlaneDistance(d));
        }
        Ok(PlaneParams {
            d,
            theta: wrap_two_pi(theta),
        })
    }

    /// Point on the plane closest to the origin, `n(θ)·d`.
    pub fn normal_point(&self) -> Vector2<f64> {
        normal_vec(self.theta) * self.d
    }
}

/// Wall plane as seen from a pose. A negative distance marks the flagged
/// "behind" state: the pose has crossed the plane and the measurement is
/// invalid rather than erroneous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPlane {
    pub d: f64,
    pub theta: f64,
}

impl LocalPlane {
    pub fn new(d: f64, theta: f64) -> Self {
        LocalPlane {
            d,
            theta: wrap_two_pi(theta),
        }
    }

    pub fn is_behind(&self) -> bool {
        self.d < 0.0
    }
}

/// Plane parameters as seen from `pose`: `d_local = d − xᵀ n(θ)`,
/// `θ_local = θ − φ`.
pub fn local_plane_params(pose: &Pose2, plane: &PlaneParams) -> LocalPlane {
    let d = plane.d - pose.translation().dot(&normal_vec(plane.theta));
    LocalPlane::new(d, plane.theta - pose.phi)
}

/// Express a local plane observation back in the global frame using the
/// observing pose. Inverse of [`local_plane_params`]; the returned distance
/// may be negative if the observation is inconsistent.
pub fn global_plane_params(pose: &Pose2, local: &LocalPlane) -> LocalPlane {
    let theta = wrap_two_pi(local.theta + pose.phi);
    let d = local.d + pose.translation().dot(&normal_vec(theta));
    LocalPlane { d, theta }
}

/// Length of the first-order reflected path off a wall at local parameters
/// `(d, θ)` for a microphone with direct path `ell` and bearing `bearing`:
/// `r = sqrt(ℓ² + 4d² − 4dℓ cos(bearing − θ))`.
pub fn reflected_path_length(mic_ell: f64, mic_bearing: f64, local_plane: &LocalPlane) -> f64 {
    let cos_term = (mic_bearing - local_plane.theta).cos();
    let d = local_plane.d;
    (mic_ell * mic_ell + 4.0 * d * d - 4.0 * d * mic_ell * cos_term)
        .max(0.0)
        .sqrt()
}

/// Wall distance from a reflected path length at a fixed local angle.
///
/// Returns `None` when the discriminant is negative (no real solution).
/// For `mic_ell = 0` this reduces to `r / 2`.
pub fn distance_from_path(r: f64, local_angle: f64, mic_ell: f64, mic_bearing: f64) -> Option<f64> {
    let c = (mic_bearing - local_angle).cos();
    let disc = mic_ell * mic_ell * (c * c - 1.0) + r * r;
    if disc < 0.0 {
        return None;
    }
    Some(0.5 * (mic_ell * c + disc.sqrt()))
}
