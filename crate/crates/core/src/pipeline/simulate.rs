//! Dataset simulation: samples the configured trajectory, synthesizes sweep
//! frames against the configured walls, and writes JSONL records with
//! ground-truth sidecars.

use super::{
    config::{ExperimentConfig, Scenario},
    dataset::{FrameRecord, GroundTruth},
};
use super::{sub_seed, PipelineError, SeedStream};
use crate::acoustics::simulate_sweep_frame;
use crate::geometry::{local_plane_params, Pose2};
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;

/// Summary of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationStats {
    /// Number of frames written.
    pub frames: usize,
    /// Ground-truth distance to the nearest wall per frame (m); empty when
    /// the scenario has no walls.
    pub nearest_distances: Vec<f64>,
}

/// Samples a polyline at fixed arc-length steps, including the start point.
/// A zero-length trajectory yields a single sample.
pub fn sample_trajectory(waypoints: &[[f64; 2]], step: f64) -> Vec<Vector2<f64>> {
    let points: Vec<Vector2<f64>> = waypoints.iter().map(|&[x, y]| Vector2::new(x, y)).collect();
    let mut cumulative = vec![0.0];
    for w in points.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + (w[1] - w[0]).norm());
    }
    let total = *cumulative.last().unwrap();
    if total <= 0.0 {
        return vec![points[0]];
    }
    let n_frames = (total / step + 1e-9).floor() as usize + 1;
    let mut samples = Vec::with_capacity(n_frames);
    let mut segment = 0usize;
    for i in 0..n_frames {
        let s = (i as f64 * step).min(total);
        while segment + 1 < cumulative.len() - 1 && cumulative[segment + 1] < s {
            segment += 1;
        }
        let seg_len = cumulative[segment + 1] - cumulative[segment];
        let u = if seg_len > 0.0 {
            (s - cumulative[segment]) / seg_len
        } else {
            0.0
        };
        samples.push(points[segment] + (points[segment + 1] - points[segment]) * u);
    }
    samples
}

/// Simulates the configured scenario and writes the JSONL dataset.
///
/// Every frame carries the odometry pose estimate (true pose plus the
/// configured odometry noise) and a ground-truth sidecar. Errors if the
/// trajectory crosses a wall, naming the offending frame.
pub fn run_simulation(
    cfg: &ExperimentConfig,
    mut writer: impl Write,
) -> Result<SimulationStats, PipelineError> {
    cfg.validate()?;
    if cfg.scenario == Scenario::Replay {
        return Err(PipelineError::Config(
            "the replay scenario has no simulator; use an existing dataset".into(),
        ));
    }
    let mics = cfg.mic_geometry()?;
    let sched = cfg.sweep_schedule()?;
    let acoustics = cfg.acoustic_config()?;
    let walls = cfg.wall_planes()?;
    let positions = sample_trajectory(&cfg.trajectory.waypoints, cfg.trajectory.step);
    let period = cfg.frame_period();

    let mut jitter_rng =
        ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, SeedStream::LateralJitter, 0));
    let mut odom_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, SeedStream::OdometryNoise, 0));
    let jitter_dist = Normal::new(0.0, cfg.trajectory.lateral_jitter)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let odom_xy_dist = Normal::new(0.0, cfg.trajectory.odom_noise_xy)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let odom_phi_dist = Normal::new(0.0, cfg.trajectory.odom_noise_phi)
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut nearest_distances = Vec::with_capacity(positions.len());
    for (i, base) in positions.iter().enumerate() {
        // Lateral jitter perpendicular to the local direction of motion.
        let dir = if positions.len() > 1 {
            let (a, b) = if i + 1 < positions.len() {
                (positions[i], positions[i + 1])
            } else {
                (positions[i - 1], positions[i])
            };
            let d = b - a;
            let norm = d.norm();
            if norm > 0.0 {
                d / norm
            } else {
                Vector2::new(1.0, 0.0)
            }
        } else {
            Vector2::new(1.0, 0.0)
        };
        let lateral = Vector2::new(-dir.y, dir.x);
        let true_pos = if cfg.trajectory.lateral_jitter > 0.0 {
            base + lateral * jitter_dist.sample(&mut jitter_rng)
        } else {
            *base
        };
        let true_pose = Pose2::new(true_pos.x, true_pos.y, cfg.trajectory.heading);

        let estimate = if cfg.trajectory.odom_noise_xy > 0.0 || cfg.trajectory.odom_noise_phi > 0.0
        {
            Pose2::new(
                true_pose.x + odom_xy_dist.sample(&mut odom_rng),
                true_pose.y + odom_xy_dist.sample(&mut odom_rng),
                true_pose.phi + odom_phi_dist.sample(&mut odom_rng),
            )
        } else {
            true_pose
        };

        if !walls.is_empty() {
            let nearest = walls
                .iter()
                .map(|w| local_plane_params(&true_pose, w).d)
                .fold(f64::INFINITY, f64::min);
            if nearest <= 0.0 {
                return Err(PipelineError::Data(format!(
                    "trajectory crosses a wall at frame {i}"
                )));
            }
            nearest_distances.push(nearest);
        }

        let frame = simulate_sweep_frame(
            &true_pose,
            &walls,
            &mics,
            &acoustics,
            &sched,
            sub_seed(cfg.seed, SeedStream::MagnitudeNoise, i as u64),
        )
        .map_err(|e| PipelineError::Data(format!("frame {i}: {e}")))?;

        let record = FrameRecord {
            t: i as f64 * period,
            pose: [estimate.x, estimate.y, estimate.phi],
            freqs: frame.freqs,
            mags: frame.mags,
            gt: Some(GroundTruth {
                pose: [true_pose.x, true_pose.y, true_pose.phi],
                planes: cfg.walls.clone(),
            }),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| PipelineError::Data(format!("serializing frame {i}: {e}")))?;
        writeln!(writer, "{line}").map_err(|e| PipelineError::Data(e.to_string()))?;
    }

    Ok(SimulationStats {
        frames: positions.len(),
        nearest_distances,
    })
}
