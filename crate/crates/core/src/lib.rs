//! Sound-based wall localization and mapping.
//!
//! A speaker-and-microphone rig on a moving robot emits multi-tone sweeps;
//! interference between the direct sound and first-order wall echoes encodes
//! the echo path-length difference in the received magnitudes. This crate
//! turns those magnitudes into a posterior over the path difference, tracks
//! wall distance and direction with a particle filter, and fuses odometry
//! with detected walls in a plane-landmark factor graph.
//!
//! Modules mirror the processing stages:
//!
//! - [`geometry`]: poses, microphone arrays, wall planes, reflection paths
//! - [`acoustics`]: sweep-frame simulation and magnitude extraction
//! - [`calibration`]: per-frequency gain tracking and normalization
//! - [`pathdiff`]: path-difference posterior from normalized magnitudes
//! - [`filter`]: particle filter over wall distance and direction
//! - [`slam`]: plane-landmark factor graph and Gauss-Newton solver
//! - [`pipeline`]: dataset simulation, estimation runs, metrics

pub mod acoustics;
pub mod calibration;
pub mod filter;
pub mod geometry;
pub mod pathdiff;
pub mod pipeline;
pub mod slam;

#[cfg(test)]
pub(crate) mod testutil;

pub use acoustics::{
    extract_bin_magnitude, flattop_window, make_interference_matrix, model_magnitude,
    simulate_sweep_frame, simulate_time_signal, AcousticConfig, AcousticsError, SweepFrame,
    SweepSchedule,
};
pub use calibration::{
    normalize_frame, update_gain, CalibrationError, GainState, NormalizedChannel,
};
pub use filter::{
    estimate_moments, init_particles, predict, resample_stratified, update_weights, FilterError,
    Particle, ParticleSet, RelativeMotion, UpdateStatus, WallEstimate, DEFAULT_INJECT_FRAC,
    DEFAULT_PARTICLES,
};
pub use geometry::{
    distance_from_path, global_plane_params, local_plane_params, normal_vec, normal_vec_deriv,
    pose_ominus, pose_oplus, reflected_path_length, wrap_pi, wrap_two_pi, GeometryError,
    LocalPlane, MicGeometry, PlaneParams, Pose2,
};
pub use pathdiff::{
    delta_distribution, max_distance, periodogram, DeltaGrid, PathDiffDistribution, PathDiffError,
    DEFAULT_GRID_POINTS, MAX_WALL_DISTANCE,
};
pub use pipeline::{
    association_accuracy, evaluate, read_dataset, read_estimates, run_estimation, run_simulation,
    run_slam, sample_trajectory, sub_seed, write_dataset, write_map, write_metrics,
    AcousticsSection, AssociationRecord, BaselineReport, EstimateRow, EstimationStats,
    ExperimentConfig, FilterSection, FrameRecord, GroundTruth, MapOutput, MetricsReport,
    PipelineError, RuntimeStats, Scenario, SeedStream, SimulationStats, SlamRunResult, SlamSection,
    SweepSection, TrajectorySection,
};
pub use slam::{
    associate, association_loss, plane_covariance, plane_residual, pose_residual, solve,
    FactorGraph, NodeKind, PlaneFactor, PlaneNode, PoseFactor, SlamError, SolveReport,
    DEFAULT_ASSOCIATION_THRESHOLD, DEFAULT_MAX_ITERS, DEFAULT_POSE_SIGMA, DEFAULT_TOL,
};
