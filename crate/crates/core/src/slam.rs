//! Plane-landmark factor graph over SE(2) poses.
//!
//! Nodes are robot poses and wall planes in the global frame. Pose nodes
//! carry unary factors anchoring them to the state estimator's output; plane
//! nodes are tied to poses by binary factors whose residual compares the
//! plane, expressed in the observing pose's frame, against the filter's
//! (distance, angle) measurement. Data association matches candidate planes
//! to existing landmarks by the Euclidean distance between their closest
//! points to the origin. Solving is batch Gauss-Newton: poses couple to each
//! other only through planes, so the poses are eliminated block-wise and a
//! small dense system over the plane variables remains.

use crate::geometry::{
    normal_vec, normal_vec_deriv, pose_ominus, pose_oplus, se2_right_jacobian_inv, wrap_two_pi,
    PlaneParams, Pose2,
};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Default standard deviations of the pose unary factor: 1 cm in x and y,
/// 5 degrees in heading.
pub const DEFAULT_POSE_SIGMA: [f64; 3] = [0.01, 0.01, 5.0 * std::f64::consts::PI / 180.0];

/// Default data-association gate: candidate planes whose loss against every
/// existing landmark is at or above this many meters start a new landmark.
pub const DEFAULT_ASSOCIATION_THRESHOLD: f64 = 0.30;

/// Diagonal regularization added to the plane-factor covariance, which is
/// otherwise rank-deficient (the normal-vector rows only constrain the
/// direction orthogonal to the normal).
pub const COVARIANCE_REGULARIZATION: f64 = 1e-6;

/// Default Gauss-Newton iteration cap.
pub const DEFAULT_MAX_ITERS: usize = 50;

/// Default convergence threshold on the Gauss-Newton step norm.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Errors from graph construction and solving.
#[derive(Debug, Error)]
pub enum SlamError {
    /// A factor referenced a node index that does not exist.
    #[error("{kind} node index {index} out of range (have {len})")]
    NodeOutOfRange {
        kind: NodeKind,
        index: usize,
        len: usize,
    },
    /// A factor was given a non-positive or non-finite standard deviation.
    #[error("factor standard deviations must be positive and finite")]
    InvalidSigma,
    /// The graph has no pose factor, so the gauge is free.
    #[error("graph has no pose factor; the solution is unconstrained")]
    NoGaugeFactor,
    /// A variable block has too little information to solve for.
    #[error("{kind} node {index} is under-constrained")]
    UnderConstrained { kind: NodeKind, index: usize },
}

/// Which family a graph node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Pose,
    Plane,
}

impl std::fmt::Display for NodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeKind::Pose => write!(f, "pose"),
            NodeKind::Plane => write!(f, "plane"),
        }
    }
}

/// A plane variable as stored in the graph: unconstrained (distance may go
/// transiently negative during optimization). [`PlaneNode::to_params`]
/// canonicalizes to the non-negative-distance representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneNode {
    /// Signed distance from the global origin to the plane (m).
    pub d: f64,
    /// Direction of the plane normal from the origin (rad).
    pub theta: f64,
}

impl PlaneNode {
    /// Canonical plane parameters: flips (d, θ) to (−d, θ+π) if d is
    /// negative, wraps θ into [0, 2π).
    pub fn to_params(self) -> PlaneParams {
        let (d, theta) = if self.d < 0.0 {
            (-self.d, self.theta + std::f64::consts::PI)
        } else {
            (self.d, self.theta)
        };
        PlaneParams::new(d, wrap_two_pi(theta)).expect("canonicalized distance is non-negative")
    }
}

impl From<PlaneParams> for PlaneNode {
    fn from(p: PlaneParams) -> Self {
        PlaneNode {
            d: p.d,
            theta: p.theta,
        }
    }
}

/// Unary factor anchoring one pose node to a measured pose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFactor {
    /// Index of the pose node.
    pub node: usize,
    /// Measured pose from the state estimator.
    pub measured: Pose2,
    /// Standard deviations (σ_x, σ_y, σ_φ).
    pub sigma: [f64; 3],
}

/// Binary factor tying a pose node to a plane node through a local
/// (distance, angle) measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneFactor {
    /// Index of the observing pose node.
    pub pose: usize,
    /// Index of the observed plane node.
    pub plane: usize,
    /// Measured distance to the plane in the pose frame (m).
    pub measured_d: f64,
    /// Measured normal direction in the pose frame (rad).
    pub measured_theta: f64,
    /// Standard deviation of the distance measurement (m).
    pub sigma_d: f64,
    /// Standard deviation of the angle measurement (rad).
    pub sigma_theta: f64,
}

/// Factor graph over pose and plane nodes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FactorGraph {
    /// Pose variable estimates.
    pub pose_nodes: Vec<Pose2>,
    /// Plane variable estimates (global frame).
    pub plane_nodes: Vec<PlaneNode>,
    /// Unary pose factors.
    pub pose_factors: Vec<PoseFactor>,
    /// Binary pose-plane factors.
    pub plane_factors: Vec<PlaneFactor>,
}

/// Result of a Gauss-Newton solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Optimized pose estimates (also written back into the graph).
    pub poses: Vec<Pose2>,
    /// Optimized plane estimates, canonicalized to d ≥ 0.
    pub planes: Vec<PlaneParams>,
    /// Final total whitened squared-residual cost.
    pub cost: f64,
    /// Number of accepted Gauss-Newton iterations.
    pub iterations: usize,
    /// Cost after each accepted iteration, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    /// Marginal covariance of each plane's (d, θ), accounting for pose
    /// uncertainty (diagonal blocks of the inverse plane-system matrix).
    pub plane_marginals: Vec<Matrix2<f64>>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a pose variable, returning its index.
    pub fn add_pose_node(&mut self, pose: Pose2) -> usize {
        self.pose_nodes.push(pose);
        self.pose_nodes.len() - 1
    }

    /// Adds a plane variable, returning its index.
    pub fn add_plane_node(&mut self, plane: PlaneParams) -> usize {
        self.plane_nodes.push(plane.into());
        self.plane_nodes.len() - 1
    }

    /// Adds a unary pose factor.
    pub fn add_pose_factor(
        &mut self,
        node: usize,
        measured: Pose2,
        sigma: [f64; 3],
    ) -> Result<(), SlamError> {
        if node >= self.pose_nodes.len() {
            return Err(SlamError::NodeOutOfRange {
                kind: NodeKind::Pose,
                index: node,
                len: self.pose_nodes.len(),
            });
        }
        if !sigma.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(SlamError::InvalidSigma);
        }
        self.pose_factors.push(PoseFactor {
            node,
            measured,
            sigma,
        });
        Ok(())
    }

    /// Adds a binary pose-plane factor.
    pub fn add_plane_factor(
        &mut self,
        pose: usize,
        plane: usize,
        measured_d: f64,
        measured_theta: f64,
        sigma_d: f64,
        sigma_theta: f64,
    ) -> Result<(), SlamError> {
        if pose >= self.pose_nodes.len() {
            return Err(SlamError::NodeOutOfRange {
                kind: NodeKind::Pose,
                index: pose,
                len: self.pose_nodes.len(),
            });
        }
        if plane >= self.plane_nodes.len() {
            return Err(SlamError::NodeOutOfRange {
                kind: NodeKind::Plane,
                index: plane,
                len: self.plane_nodes.len(),
            });
        }
        for s in [sigma_d, sigma_theta] {
            if !(s.is_finite() && s > 0.0) {
                return Err(SlamError::InvalidSigma);
            }
        }
        self.plane_factors.push(PlaneFactor {
            pose,
            plane,
            measured_d,
            measured_theta,
            sigma_d,
            sigma_theta,
        });
        Ok(())
    }
}

/// Whitened residual and Jacobian of a pose unary factor.
///
/// The raw residual is the tangent-space difference `ominus(ξ, ξ̃)`; the
/// Jacobian is taken with respect to a right tangent perturbation of ξ
/// (i.e. ξ ∘ exp(δ)). Both are scaled row-wise by 1/σ.
pub fn pose_residual(
    xi: &Pose2,
    measured: &Pose2,
    sigma: &[f64; 3],
) -> (Vector3<f64>, Matrix3<f64>) {
    let r = pose_ominus(xi, measured);
    let mut jac = se2_right_jacobian_inv(&r);
    let mut r = r;
    for i in 0..3 {
        r[i] /= sigma[i];
        for j in 0..3 {
            jac[(i, j)] /= sigma[i];
        }
    }
    (r, jac)
}

/// Whitened residual and Jacobians of a plane factor.
///
/// Rows 1–2 compare the plane normal rotated into the pose frame against the
/// measured normal direction; row 3 compares the plane's distance in the
/// pose frame, `d_l − xᵀn(θ_l)`, against the measured distance. The residual
/// is whitened by the inverse Cholesky factor of [`plane_covariance`].
///
/// Returns `(residual, ∂/∂pose-tangent, ∂/∂(d_l, θ_l))`.
pub fn plane_residual(
    xi: &Pose2,
    plane: &PlaneNode,
    measured_d: f64,
    measured_theta: f64,
    sigma_d: f64,
    sigma_theta: f64,
) -> (Vector3<f64>, Matrix3<f64>, Matrix3x2<f64>) {
    let n = normal_vec(plane.theta);
    let n_prime = normal_vec_deriv(plane.theta);
    let rot_t = xi.rotation().transpose();
    let n_body = rot_t * n;
    let x = xi.translation();

    let n_meas = normal_vec(measured_theta);
    let r = Vector3::new(
        n_body.x - n_meas.x,
        n_body.y - n_meas.y,
        (plane.d - x.dot(&n)) - measured_d,
    );

    // Pose Jacobian under x ← x + R δρ, φ ← φ + δφ:
    // rows 1–2 depend only on φ (d(Rᵀ)/dφ = S Rᵀ with S = [[0,1],[−1,0]]);
    // row 3 depends only on translation through −(Rᵀn)ᵀ.
    let s_rot_n = Vector2::new(n_body.y, -n_body.x);
    let mut j_pose = Matrix3::zeros();
    j_pose[(0, 2)] = s_rot_n.x;
    j_pose[(1, 2)] = s_rot_n.y;
    j_pose[(2, 0)] = -n_body.x;
    j_pose[(2, 1)] = -n_body.y;

    // Plane Jacobian: columns (d_l, θ_l).
    let n_prime_body = rot_t * n_prime;
    let mut j_plane = Matrix3x2::zeros();
    j_plane[(0, 1)] = n_prime_body.x;
    j_plane[(1, 1)] = n_prime_body.y;
    j_plane[(2, 0)] = 1.0;
    j_plane[(2, 1)] = -x.dot(&n_prime);

    // Whiten by the inverse square root of the measurement covariance
    // (see `plane_covariance`), treating its regularization floor as a rank
    // decision: the covariance is σθ² along ∂n/∂θ at the measured angle and
    // σd² on the distance row, with no first-order noise along the measured
    // normal itself. The normal-direction component of the residual is
    // cos δ − 1, second order in the angle mismatch δ, and the distance row
    // already carries the information along the normal — so that component
    // is projected out instead of being amplified by 1/√ε.
    let m_prime = normal_vec_deriv(measured_theta);
    let w_theta = 1.0 / (sigma_theta * sigma_theta + COVARIANCE_REGULARIZATION).sqrt();
    let w_d = 1.0 / (sigma_d * sigma_d + COVARIANCE_REGULARIZATION).sqrt();
    let whiten_vec = |v: &Vector3<f64>| {
        Vector3::new(
            w_theta * (m_prime.x * v.x + m_prime.y * v.y),
            0.0,
            w_d * v.z,
        )
    };
    let r_w = whiten_vec(&r);
    let mut j_pose_w = Matrix3::zeros();
    let mut j_plane_w = Matrix3x2::zeros();
    for col in 0..3 {
        let v = whiten_vec(&Vector3::new(
            j_pose[(0, col)],
            j_pose[(1, col)],
            j_pose[(2, col)],
        ));
        j_pose_w.set_column(col, &v);
    }
    for col in 0..2 {
        let v = whiten_vec(&Vector3::new(
            j_plane[(0, col)],
            j_plane[(1, col)],
            j_plane[(2, col)],
        ));
        j_plane_w.set_column(col, &v);
    }
    (r_w, j_pose_w, j_plane_w)
}

/// Covariance of a plane measurement's 3-row residual.
///
/// The normal-vector rows inherit σθ² along the normal's derivative
/// direction, giving the rank-1 block σθ² (∂n/∂θ)(∂n/∂θ)ᵀ at the measured
/// angle; the distance row carries σd². A small diagonal term keeps the
/// matrix invertible for whitening.
pub fn plane_covariance(sigma_theta: f64, sigma_d: f64, theta_tilde: f64) -> Matrix3<f64> {
    let n_prime = normal_vec_deriv(theta_tilde);
    let mut cov = Matrix3::zeros();
    let st2 = sigma_theta * sigma_theta;
    cov[(0, 0)] = st2 * n_prime.x * n_prime.x;
    cov[(0, 1)] = st2 * n_prime.x * n_prime.y;
    cov[(1, 0)] = st2 * n_prime.y * n_prime.x;
    cov[(1, 1)] = st2 * n_prime.y * n_prime.y;
    cov[(2, 2)] = sigma_d * sigma_d;
    for i in 0..3 {
        cov[(i, i)] += COVARIANCE_REGULARIZATION;
    }
    cov
}

/// Distance between the closest points of two planes to the origin:
/// ‖n(θ_a) d_a − n(θ_b) d_b‖. Symmetric in its arguments.
pub fn association_loss(a: &PlaneParams, b: &PlaneParams) -> f64 {
    (normal_vec(a.theta) * a.d - normal_vec(b.theta) * b.d).norm()
}

/// Matches a candidate plane against existing landmarks.
///
/// Returns the index of the landmark with the smallest [`association_loss`]
/// if that loss is strictly below `threshold`, ties broken by the lowest
/// index; `None` means the candidate starts a new landmark.
pub fn associate(
    candidate: &PlaneParams,
    existing: &[PlaneParams],
    threshold: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, plane) in existing.iter().enumerate() {
        let loss = association_loss(candidate, plane);
        if best.map_or(true, |(_, l)| loss < l) {
            best = Some((j, loss));
        }
    }
    match best {
        Some((j, loss)) if loss < threshold => Some(j),
        _ => None,
    }
}

/// Per-pose accumulators for one Gauss-Newton assembly pass.
struct Assembly {
    cost: f64,
    /// Pose diagonal blocks of JᵀJ.
    a_blocks: Vec<Matrix3<f64>>,
    /// Pose gradient blocks of −Jᵀr.
    b_pose: Vec<Vector3<f64>>,
    /// Plane diagonal blocks of JᵀJ.
    d_blocks: Vec<Matrix2<f64>>,
    /// Plane gradient blocks of −Jᵀr.
    b_plane: Vec<Vector2<f64>>,
    /// Pose-plane coupling blocks of JᵀJ, grouped by pose.
    coupling: Vec<BTreeMap<usize, Matrix3x2<f64>>>,
    /// Whether each pose / plane is touched by any factor.
    pose_used: Vec<bool>,
    plane_used: Vec<bool>,
}

fn assemble(poses: &[Pose2], planes: &[PlaneNode], graph: &FactorGraph) -> Assembly {
    let np = poses.len();
    let nl = planes.len();
    let mut asm = Assembly {
        cost: 0.0,
        a_blocks: vec![Matrix3::zeros(); np],
        b_pose: vec![Vector3::zeros(); np],
        d_blocks: vec![Matrix2::zeros(); nl],
        b_plane: vec![Vector2::zeros(); nl],
        coupling: vec![BTreeMap::new(); np],
        pose_used: vec![false; np],
        plane_used: vec![false; nl],
    };
    for f in &graph.pose_factors {
        let (r, j) = pose_residual(&poses[f.node], &f.measured, &f.sigma);
        asm.cost += r.norm_squared();
        asm.a_blocks[f.node] += j.transpose() * j;
        asm.b_pose[f.node] -= j.transpose() * r;
        asm.pose_used[f.node] = true;
    }
    for f in &graph.plane_factors {
        let (r, jp, jl) = plane_residual(
            &poses[f.pose],
            &planes[f.plane],
            f.measured_d,
            f.measured_theta,
            f.sigma_d,
            f.sigma_theta,
        );
        asm.cost += r.norm_squared();
        asm.a_blocks[f.pose] += jp.transpose() * jp;
        asm.b_pose[f.pose] -= jp.transpose() * r;
        asm.d_blocks[f.plane] += jl.transpose() * jl;
        asm.b_plane[f.plane] -= jl.transpose() * r;
        *asm.coupling[f.pose]
            .entry(f.plane)
            .or_insert_with(Matrix3x2::zeros) += jp.transpose() * jl;
        asm.pose_used[f.pose] = true;
        asm.plane_used[f.plane] = true;
    }
    asm
}

fn total_cost(poses: &[Pose2], planes: &[PlaneNode], graph: &FactorGraph) -> f64 {
    let mut cost = 0.0;
    for f in &graph.pose_factors {
        let (r, _) = pose_residual(&poses[f.node], &f.measured, &f.sigma);
        cost += r.norm_squared();
    }
    for f in &graph.plane_factors {
        let (r, _, _) = plane_residual(
            &poses[f.pose],
            &planes[f.plane],
            f.measured_d,
            f.measured_theta,
            f.sigma_d,
            f.sigma_theta,
        );
        cost += r.norm_squared();
    }
    cost
}

/// One Gauss-Newton step: eliminates the (block-diagonal) pose system first,
/// solves the remaining dense plane system, then back-substitutes poses.
/// Also returns the plane-system matrix for marginal extraction.
fn gauss_newton_step(
    asm: &Assembly,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector2<f64>>, DMatrix<f64>), SlamError> {
    let np = asm.a_blocks.len();
    let nl = asm.d_blocks.len();

    let mut a_chol = Vec::with_capacity(np);
    for (n, a) in asm.a_blocks.iter().enumerate() {
        match nalgebra::Cholesky::new(*a) {
            Some(c) => a_chol.push(c),
            None => {
                return Err(SlamError::UnderConstrained {
                    kind: NodeKind::Pose,
                    index: n,
                })
            }
        }
    }

    // Plane system S = D − Σ_n B_nᵀ A_n⁻¹ B_n, rhs = b_plane − Σ B_nᵀ A_n⁻¹ b_n.
    let mut s = DMatrix::<f64>::zeros(2 * nl, 2 * nl);
    let mut rhs = DVector::<f64>::zeros(2 * nl);
    for (l, d) in asm.d_blocks.iter().enumerate() {
        s.view_mut((2 * l, 2 * l), (2, 2)).copy_from(d);
        rhs.rows_mut(2 * l, 2).copy_from(&asm.b_plane[l]);
    }
    for n in 0..np {
        if asm.coupling[n].is_empty() {
            continue;
        }
        let y = a_chol[n].solve(&asm.b_pose[n]);
        // A_n⁻¹ B_{n,l} per partner plane, reused for all cross terms.
        let solved: Vec<(usize, Matrix3x2<f64>)> = asm.coupling[n]
            .iter()
            .map(|(&l, b)| (l, a_chol[n].solve(b)))
            .collect();
        for (l1, b1) in &asm.coupling[n] {
            let corr = b1.transpose() * y;
            let mut seg = rhs.rows_mut(2 * l1, 2);
            seg -= corr;
            for (l2, x2) in &solved {
                let block = b1.transpose() * x2;
                let mut view = s.view_mut((2 * l1, 2 * l2), (2, 2));
                view -= &block;
            }
        }
    }

    let delta_planes_vec = if nl > 0 {
        match s.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => {
                // Identify the weakest plane block for the error message.
                let mut worst = 0usize;
                let mut worst_det = f64::INFINITY;
                for l in 0..nl {
                    let b = s.view((2 * l, 2 * l), (2, 2));
                    let det = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)];
                    if det < worst_det {
                        worst_det = det;
                        worst = l;
                    }
                }
                return Err(SlamError::UnderConstrained {
                    kind: NodeKind::Plane,
                    index: worst,
                });
            }
        }
    } else {
        DVector::zeros(0)
    };

    let mut delta_planes = Vec::with_capacity(nl);
    for l in 0..nl {
        delta_planes.push(Vector2::new(
            delta_planes_vec[2 * l],
            delta_planes_vec[2 * l + 1],
        ));
    }

    // Back-substitute poses: δ_n = A_n⁻¹ (b_n − Σ_l B_{n,l} δ_l).
    let mut delta_poses = Vec::with_capacity(np);
    for n in 0..np {
        let mut rhs_n = asm.b_pose[n];
        for (l, b) in &asm.coupling[n] {
            rhs_n -= b * delta_planes[*l];
        }
        delta_poses.push(a_chol[n].solve(&rhs_n));
    }
    Ok((delta_poses, delta_planes, s))
}

fn apply_step(
    poses: &[Pose2],
    planes: &[PlaneNode],
    dp: &[Vector3<f64>],
    dl: &[Vector2<f64>],
    alpha: f64,
) -> (Vec<Pose2>, Vec<PlaneNode>) {
    let new_poses = poses
        .iter()
        .zip(dp)
        .map(|(p, d)| pose_oplus(p, &(d * alpha)))
        .collect();
    let new_planes = planes
        .iter()
        .zip(dl)
        .map(|(p, d)| PlaneNode {
            d: p.d + alpha * d.x,
            theta: p.theta + alpha * d.y,
        })
        .collect();
    (new_poses, new_planes)
}

/// Batch Gauss-Newton over the whitened residual stack.
///
/// Terminates when the step norm drops below `tol` or after `max_iters`
/// accepted iterations; steps that would increase the cost are halved until
/// they don't (the cost trace is non-increasing). Node estimates in the
/// graph are updated in place, and plane marginal covariances are extracted
/// at the final estimate.
pub fn solve(
    graph: &mut FactorGraph,
    max_iters: usize,
    tol: f64,
) -> Result<SolveReport, SlamError> {
    if graph.pose_factors.is_empty() {
        return Err(SlamError::NoGaugeFactor);
    }
    for f in &graph.pose_factors {
        if f.node >= graph.pose_nodes.len() {
            return Err(SlamError::NodeOutOfRange {
                kind: NodeKind::Pose,
                index: f.node,
                len: graph.pose_nodes.len(),
            });
        }
    }
    for f in &graph.plane_factors {
        if f.pose >= graph.pose_nodes.len() {
            return Err(SlamError::NodeOutOfRange {
                kind: NodeKind::Pose,
                index: f.pose,
                len: graph.pose_nodes.len(),
            });
        }
        if f.plane >= graph.plane_nodes.len() {
            return Err(SlamError::NodeOutOfRange {
                kind: NodeKind::Plane,
                index: f.plane,
                len: graph.plane_nodes.len(),
            });
        }
    }

    let mut poses = graph.pose_nodes.clone();
    let mut planes = graph.plane_nodes.clone();

    // Every variable must be touched by at least one factor.
    {
        let asm = assemble(&poses, &planes, graph);
        for (n, used) in asm.pose_used.iter().enumerate() {
            if !used {
                return Err(SlamError::UnderConstrained {
                    kind: NodeKind::Pose,
                    index: n,
                });
            }
        }
        for (l, used) in asm.plane_used.iter().enumerate() {
            if !used {
                return Err(SlamError::UnderConstrained {
                    kind: NodeKind::Plane,
                    index: l,
                });
            }
        }
    }

    let mut cost = total_cost(&poses, &planes, graph);
    let mut cost_trace = vec![cost];
    let mut iterations = 0;
    let mut final_s: Option<DMatrix<f64>> = None;

    for _ in 0..max_iters {
        let asm = assemble(&poses, &planes, graph);
        let (dp, dl, s) = gauss_newton_step(&asm)?;
        final_s = Some(s);
        let step_norm = dp
            .iter()
            .map(|v| v.norm_squared())
            .chain(dl.iter().map(|v| v.norm_squared()))
            .sum::<f64>()
            .sqrt();
        if step_norm < tol {
            break;
        }
        // Step halving: accept the first scale that does not increase cost.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let (cand_poses, cand_planes) = apply_step(&poses, &planes, &dp, &dl, alpha);
            let cand_cost = total_cost(&cand_poses, &cand_planes, graph);
            if cand_cost <= cost {
                poses = cand_poses;
                planes = cand_planes;
                cost = cand_cost;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        iterations += 1;
        cost_trace.push(cost);
    }

    // Marginals and the final plane system at the converged estimate.
    let s = match final_s {
        Some(s) => s,
        None => gauss_newton_step(&assemble(&poses, &planes, graph))?.2,
    };
    let nl = planes.len();
    let mut plane_marginals = Vec::with_capacity(nl);
    if nl > 0 {
        let s_inv = s.clone().try_inverse().ok_or(SlamError::UnderConstrained {
            kind: NodeKind::Plane,
            index: 0,
        })?;
        for l in 0..nl {
            let b = s_inv.view((2 * l, 2 * l), (2, 2));
            plane_marginals.push(Matrix2::new(b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]));
        }
    }

    graph.pose_nodes = poses.clone();
    graph.plane_nodes = planes
        .iter()
        .map(|p| PlaneNode {
            d: p.d,
            theta: wrap_two_pi(p.theta),
        })
        .collect();

    Ok(SolveReport {
        poses,
        planes: graph.plane_nodes.iter().map(|p| p.to_params()).collect(),
        cost,
        iterations,
        cost_trace,
        plane_marginals,
    })
}
