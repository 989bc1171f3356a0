//! Map building: folds the pose stream and wall estimates into the plane
//! factor graph, re-solving after every frame, and emits the optimized map.

use super::PipelineError;
use super::{config::ExperimentConfig, dataset::FrameRecord, estimate::EstimateRow};
use crate::geometry::{global_plane_params, LocalPlane, Pose2};
use crate::slam::{associate, solve, FactorGraph, PlaneNode, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

/// One association decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRecord {
    /// Frame timestamp.
    pub t: f64,
    /// Plane node the measurement was attached to.
    pub plane: usize,
    /// Whether the measurement started a new landmark.
    pub new: bool,
}

/// Serializable map output: optimized trajectory, planes, association
/// history, and the final solver cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapOutput {
    /// Optimized poses [x, y, φ] per frame.
    pub poses: Vec<[f64; 3]>,
    /// Optimized global planes (distance, normal angle).
    pub planes: Vec<[f64; 2]>,
    /// Association decision per wall-detection frame.
    pub associations: Vec<AssociationRecord>,
    /// Final whitened squared-residual cost.
    pub final_cost: f64,
}

/// In-process result of a SLAM run: the graph (for inspection), the
/// serializable map, and per-frame solve timings.
#[derive(Debug)]
pub struct SlamRunResult {
    pub graph: FactorGraph,
    pub map: MapOutput,
    /// Wall-clock duration of each frame's graph update + solve (ms); not
    /// serialized, so identical seeds still produce identical map bytes.
    pub frame_ms: Vec<f64>,
}

/// Builds and incrementally solves the factor graph over the frame stream.
///
/// Every frame adds a pose node anchored by a unary factor at the odometry
/// estimate. Frames whose estimated wall distance falls below the detection
/// threshold contribute a plane measurement: the filter's (d, θ) moments, or
/// with the wall-ahead flag the direction of motion as the normal. The
/// candidate plane is associated against existing landmarks in the global
/// frame, then the whole graph is re-solved (warm-started).
pub fn run_slam(
    records: &[FrameRecord],
    estimates: &[EstimateRow],
    cfg: &ExperimentConfig,
) -> Result<SlamRunResult, PipelineError> {
    cfg.validate()?;
    if records.len() != estimates.len() {
        return Err(PipelineError::Data(format!(
            "dataset has {} frames but the estimate stream has {} rows",
            records.len(),
            estimates.len()
        )));
    }
    let mut graph = FactorGraph::new();
    let mut associations = Vec::new();
    let mut frame_ms = Vec::new();
    let mut final_cost = 0.0;
    let mut prev_pose: Option<Pose2> = None;

    for (i, (record, row)) in records.iter().zip(estimates).enumerate() {
        if (record.t - row.t).abs() > 1e-9 {
            return Err(PipelineError::DataLine {
                line: i + 1,
                msg: format!(
                    "timestamp mismatch: dataset t={} vs estimates t={}",
                    record.t, row.t
                ),
            });
        }
        let start = Instant::now();
        let measured_pose = record.pose_estimate();
        let node = graph.add_pose_node(measured_pose);
        graph
            .add_pose_factor(node, measured_pose, cfg.slam.sigma_pose)
            .map_err(|e| PipelineError::Data(format!("frame {i}: {e}")))?;

        if row.d_mean < cfg.slam.wall_detect {
            let theta_local = if cfg.slam.wall_ahead {
                // Wall normal taken as the direction of motion, expressed in
                // the body frame; falls back to the filter angle when the
                // robot has not moved.
                match prev_pose {
                    Some(prev) => {
                        let delta = measured_pose.translation() - prev.translation();
                        if delta.norm() > 1e-9 {
                            let body = measured_pose.rotation().transpose() * delta;
                            body.y.atan2(body.x)
                        } else {
                            row.theta_mean
                        }
                    }
                    None => row.theta_mean,
                }
            } else {
                row.theta_mean
            };
            let sigma_d = row.sigma_d.max(cfg.slam.sigma_d_floor);
            let sigma_theta = row.sigma_theta.max(cfg.slam.sigma_theta_floor);

            // Candidate in the global frame via the current pose estimate.
            let raw = global_plane_params(
                &graph.pose_nodes[node],
                &LocalPlane {
                    d: row.d_mean,
                    theta: theta_local,
                },
            );
            let candidate = PlaneNode {
                d: raw.d,
                theta: raw.theta,
            }
            .to_params();
            let existing: Vec<_> = graph.plane_nodes.iter().map(|p| p.to_params()).collect();
            let (plane_idx, is_new) =
                match associate(&candidate, &existing, cfg.slam.association_threshold) {
                    Some(idx) => (idx, false),
                    None => (graph.add_plane_node(candidate), true),
                };
            graph
                .add_plane_factor(
                    node,
                    plane_idx,
                    row.d_mean,
                    theta_local,
                    sigma_d,
                    sigma_theta,
                )
                .map_err(|e| PipelineError::Data(format!("frame {i}: {e}")))?;
            associations.push(AssociationRecord {
                t: record.t,
                plane: plane_idx,
                new: is_new,
            });
        }

        let report = solve(&mut graph, DEFAULT_MAX_ITERS, DEFAULT_TOL)
            .map_err(|e| PipelineError::Data(format!("frame {i}: solver: {e}")))?;
        final_cost = report.cost;
        prev_pose = Some(measured_pose);
        frame_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }

    let map = MapOutput {
        poses: graph.pose_nodes.iter().map(|p| [p.x, p.y, p.phi]).collect(),
        planes: graph
            .plane_nodes
            .iter()
            .map(|p| {
                let params = p.to_params();
                [params.d, params.theta]
            })
            .collect(),
        associations,
        final_cost,
    };
    Ok(SlamRunResult {
        graph,
        map,
        frame_ms,
    })
}

/// Writes the map as pretty-printed JSON.
pub fn write_map(map: &MapOutput, mut writer: impl Write) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(map)
        .map_err(|e| PipelineError::Data(format!("serializing map: {e}")))?;
    writeln!(writer, "{text}").map_err(|e| PipelineError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::super::dataset::GroundTruth;
    use super::*;
    use crate::geometry::{local_plane_params, wrap_pi, PlaneParams};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Builds a synthetic frame/estimate pair stream for a trajectory that
    /// bounces between two facing walls, with noisy wall measurements taken
    /// whenever the nearest wall is within the detection threshold. With
    /// `approach_only`, detections happen only while moving toward the wall
    /// (the regime the wall-ahead simplification assumes).
    fn two_wall_stream(
        cfg: &ExperimentConfig,
        sigma_d: f64,
        sigma_theta: f64,
        seed: u64,
        approach_only: bool,
    ) -> (Vec<FrameRecord>, Vec<EstimateRow>, Vec<usize>) {
        let walls: Vec<PlaneParams> = cfg.wall_planes().unwrap();
        let positions = super::super::simulate::sample_trajectory(
            &cfg.trajectory.waypoints,
            cfg.trajectory.step,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        let mut rows = Vec::new();
        let mut truth_wall = Vec::new();
        for (i, pos) in positions.iter().enumerate() {
            let pose = Pose2::new(pos.x, pos.y, cfg.trajectory.heading);
            let t = i as f64;
            records.push(FrameRecord {
                t,
                pose: [pose.x, pose.y, pose.phi],
                freqs: vec![2000.0, 3000.0],
                mags: vec![vec![0.0; 2]; cfg.mics.len()],
                gt: Some(GroundTruth {
                    pose: [pose.x, pose.y, pose.phi],
                    planes: cfg.walls.clone(),
                }),
            });
            let (wall_idx, local) = walls
                .iter()
                .enumerate()
                .map(|(w, plane)| (w, local_plane_params(&pose, plane)))
                .min_by(|a, b| a.1.d.total_cmp(&b.1.d))
                .unwrap();
            let approaching = i > 0 && {
                let step = *pos - positions[i - 1];
                step.dot(&crate::geometry::normal_vec(walls[wall_idx].theta)) > 1e-9
            };
            let detected = local.d < cfg.slam.wall_detect && (!approach_only || approaching);
            let (d_mean, theta_mean) = if detected {
                (
                    local.d + rng.random_range(-1.0..1.0) * sigma_d,
                    local.theta + rng.random_range(-1.0..1.0) * sigma_theta,
                )
            } else {
                // Far from both walls: report a large distance so no
                // measurement is taken.
                (0.75, 0.0)
            };
            rows.push(EstimateRow {
                t,
                d_mean,
                theta_mean,
                sigma_d,
                sigma_theta,
                n_eff: 400.0,
            });
            truth_wall.push(wall_idx);
        }
        (records, rows, truth_wall)
    }

    #[test]
    fn two_wall_run_builds_two_planes_and_reassociates() {
        let mut cfg = ExperimentConfig::multiwall();
        cfg.seed = 3;
        let (records, rows, truth_wall) = two_wall_stream(&cfg, 0.02, 10f64.to_radians(), 3, false);
        let result = run_slam(&records, &rows, &cfg).unwrap();
        assert_eq!(
            result.graph.plane_nodes.len(),
            2,
            "expected exactly 2 planes"
        );
        assert_eq!(result.map.poses.len(), records.len());

        // The trajectory visits wall 0, then wall 1, then wall 0 again: the
        // revisit must re-associate to plane node 0, not create a third.
        let new_flags: Vec<bool> = result.map.associations.iter().map(|a| a.new).collect();
        assert_eq!(new_flags.iter().filter(|f| **f).count(), 2);
        // Map graph plane ids onto true walls via the first association.
        let mut id_to_wall = [usize::MAX; 2];
        for (a, rec_idx) in result.map.associations.iter().zip(
            records
                .iter()
                .enumerate()
                .filter(|(i, _)| rows[*i].d_mean < cfg.slam.wall_detect)
                .map(|(i, _)| i),
        ) {
            let wall = truth_wall[rec_idx];
            if a.new {
                id_to_wall[a.plane] = wall;
            } else {
                assert_eq!(
                    id_to_wall[a.plane], wall,
                    "measurement of wall {wall} associated to plane {}",
                    a.plane
                );
            }
        }
        // Final association (the revisited first wall) lands on plane 0.
        assert_eq!(result.map.associations.last().unwrap().plane, 0);

        // Recovered planes match the true walls.
        let walls = cfg.wall_planes().unwrap();
        for (l, &wall_idx) in id_to_wall.iter().enumerate() {
            let est = PlaneParams::new(result.map.planes[l][0], result.map.planes[l][1]).unwrap();
            let truth = &walls[wall_idx];
            assert!(
                (est.d - truth.d).abs() < 0.05,
                "plane {l} distance {} vs {}",
                est.d,
                truth.d
            );
            assert!(wrap_pi(est.theta - truth.theta).abs() < 10f64.to_radians());
        }
    }

    #[test]
    fn no_detection_means_no_planes() {
        let mut cfg = ExperimentConfig::multiwall();
        // Shrink the trajectory so the robot never gets close to a wall.
        cfg.trajectory.waypoints = vec![[0.0, 0.0], [0.30, 0.0]];
        let (records, rows, _) = two_wall_stream(&cfg, 0.02, 0.17, 1, false);
        let result = run_slam(&records, &rows, &cfg).unwrap();
        assert_eq!(result.graph.plane_nodes.len(), 0);
        assert!(result.map.associations.is_empty());
        assert_eq!(result.map.poses.len(), records.len());
    }

    #[test]
    fn timestamp_mismatch_is_rejected() {
        let cfg = ExperimentConfig::multiwall();
        let (records, mut rows, _) = two_wall_stream(&cfg, 0.02, 0.17, 1, false);
        rows[3].t += 0.5;
        let err = run_slam(&records, &rows, &cfg).unwrap_err();
        match err {
            PipelineError::DataLine { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected error {other:?}"),
        }
        let err = run_slam(&records[..5], &rows[..4], &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn wall_ahead_flag_uses_motion_direction() {
        let mut cfg = ExperimentConfig::multiwall();
        cfg.slam.wall_ahead = true;
        // Give the filter angle a junk value: with the flag set, the map
        // must still recover the wall normals from the motion direction.
        let (records, mut rows, _) = two_wall_stream(&cfg, 0.005, 0.02, 5, true);
        for row in &mut rows {
            row.theta_mean += 1.0; // corrupt the filter angle
        }
        let result = run_slam(&records, &rows, &cfg).unwrap();
        assert_eq!(result.graph.plane_nodes.len(), 2);
        let walls = cfg.wall_planes().unwrap();
        for plane in &result.map.planes {
            let est = PlaneParams::new(plane[0], plane[1]).unwrap();
            let best = walls
                .iter()
                .map(|w| wrap_pi(est.theta - w.theta).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 5f64.to_radians(), "normal angle off by {best} rad");
        }
    }

    #[test]
    fn map_json_is_deterministic() {
        let mut cfg = ExperimentConfig::multiwall();
        cfg.seed = 11;
        let (records, rows, _) = two_wall_stream(&cfg, 0.02, 0.17, 11, false);
        let a = run_slam(&records, &rows, &cfg).unwrap();
        let b = run_slam(&records, &rows, &cfg).unwrap();
        let mut ja = Vec::new();
        let mut jb = Vec::new();
        write_map(&a.map, &mut ja).unwrap();
        write_map(&b.map, &mut jb).unwrap();
        assert_eq!(ja, jb);
        assert!(!ja.is_empty());
    }
}
