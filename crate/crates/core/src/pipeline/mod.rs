//! Experiment orchestration: scenario configuration, dataset simulation,
//! estimation runs, map building, and metric computation.
//!
//! The stages compose as a linear, file-mediated pipeline:
//!
//! 1. [`run_simulation`] writes a JSONL dataset of sweep frames (with
//!    ground-truth sidecars) along a configured trajectory.
//! 2. [`run_estimation`] replays the dataset through calibration, the
//!    path-difference posterior, and the particle filter, writing per-frame
//!    wall estimates as CSV.
//! 3. [`run_slam`] fuses the pose stream and the wall estimates into a
//!    plane-landmark factor graph and emits the optimized map as JSON.
//! 4. [`evaluate`] joins estimates with ground truth into a metrics report
//!    (absolute errors, medians, CDFs, and baseline curves).
//!
//! All randomness derives from the single configured seed; identical config
//! and seed produce byte-identical outputs.

mod config;
mod dataset;
mod estimate;
mod metrics;
mod simulate;
mod slam_run;

pub use config::{
    AcousticsSection, ExperimentConfig, FilterSection, Scenario, SlamSection, SweepSection,
    TrajectorySection,
};
pub use dataset::{read_dataset, write_dataset, FrameRecord, GroundTruth};
pub use estimate::{read_estimates, run_estimation, EstimateRow, EstimationStats};
pub use metrics::{
    association_accuracy, evaluate, write_metrics, BaselineReport, MetricsReport, RuntimeStats,
};
pub use simulate::{run_simulation, sample_trajectory, SimulationStats};
pub use slam_run::{run_slam, write_map, AssociationRecord, MapOutput, SlamRunResult};

use thiserror::Error;

/// Pipeline-level errors, split by exit-code category: configuration
/// problems exit 1, data problems exit 2.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed or inconsistent data tied to a specific input line.
    #[error("data error at line {line}: {msg}")]
    DataLine { line: usize, msg: String },
    /// Malformed or inconsistent data.
    #[error("data error: {0}")]
    Data(String),
}

impl PipelineError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::DataLine { .. } | PipelineError::Data(_) => 2,
        }
    }
}

/// Independent random streams derived from the experiment seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedStream {
    /// Per-frame magnitude noise in the simulator.
    MagnitudeNoise = 1,
    /// Perpendicular flight-path jitter in the simulator.
    LateralJitter = 2,
    /// Odometry noise on the simulated pose estimates.
    OdometryNoise = 3,
    /// Particle filter initialization.
    FilterInit = 4,
    /// Per-frame stratified resampling.
    Resample = 5,
    /// Random-guess baseline in the evaluator.
    Baseline = 6,
}

/// Derives a per-frame sub-seed from the experiment seed, a stream tag, and
/// a frame index (SplitMix64 finalizer over the combined word).
pub fn sub_seed(seed: u64, stream: SeedStream, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add((stream as u64) << 48)
        .wrapping_add(index.wrapping_mul(0x9E3779B97F4A7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_differ_across_streams_and_frames() {
        let a = sub_seed(7, SeedStream::MagnitudeNoise, 0);
        let b = sub_seed(7, SeedStream::LateralJitter, 0);
        let c = sub_seed(7, SeedStream::MagnitudeNoise, 1);
        let d = sub_seed(8, SeedStream::MagnitudeNoise, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        // Deterministic.
        assert_eq!(a, sub_seed(7, SeedStream::MagnitudeNoise, 0));
    }

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 1);
        assert_eq!(PipelineError::Data("x".into()).exit_code(), 2);
        assert_eq!(
            PipelineError::DataLine {
                line: 3,
                msg: "x".into()
            }
            .exit_code(),
            2
        );
    }
}
