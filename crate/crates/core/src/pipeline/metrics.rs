//! Evaluation: absolute-error statistics of wall estimates against ground
//! truth, plus reference baselines (random guessing, fixed mid-range guess)
//! for comparison plots.

use super::dataset::FrameRecord;
use super::estimate::EstimateRow;
use super::slam_run::MapOutput;
use super::{sub_seed, PipelineError, SeedStream};
use crate::geometry::{local_plane_params, wrap_pi, LocalPlane, PlaneParams, Pose2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Distance guessed by the fixed baseline: the middle of the sensing range.
pub const FIXED_GUESS_DISTANCE: f64 = 0.4;
/// Upper edge of the random baseline's distance guesses.
pub const RANDOM_GUESS_MAX_DISTANCE: f64 = 0.8;

/// Error summary of one baseline guesser evaluated on the same truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub median_d_error: f64,
    pub median_theta_error: f64,
    /// Sorted (error, cumulative fraction) samples for distance.
    pub d_cdf: Vec<[f64; 2]>,
    /// Sorted (error, cumulative fraction) samples for angle (radians).
    pub theta_cdf: Vec<[f64; 2]>,
}

/// Wall-clock statistics gathered in-process. Never serialized, so metric
/// files stay byte-identical across runs with the same seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeStats {
    pub total_s: f64,
    pub mean_frame_ms: f64,
    pub p95_frame_ms: f64,
}

/// Full evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_frames: usize,
    /// Per-frame absolute distance errors (m), in frame order.
    pub d_errors: Vec<f64>,
    /// Per-frame absolute angle errors (radians, circular), in frame order.
    pub theta_errors: Vec<f64>,
    pub median_d_error: f64,
    pub median_theta_error: f64,
    /// Sorted (error, cumulative fraction) samples for distance.
    pub d_cdf: Vec<[f64; 2]>,
    /// Sorted (error, cumulative fraction) samples for angle.
    pub theta_cdf: Vec<[f64; 2]>,
    /// Uniform-random guesser evaluated on the same truth.
    pub baseline_random: BaselineReport,
    /// Fixed mid-range guesser (d = 0.4 m, θ = 0) on the same truth.
    pub baseline_fixed: BaselineReport,
    /// Fraction of landmark associations attached to the correct wall;
    /// present only when a map is supplied and ground truth lists walls.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub association_accuracy: Option<f64>,
    /// Filled in-process by callers that timed the pipeline; never part of
    /// the serialized report.
    #[serde(skip)]
    pub runtime: Option<RuntimeStats>,
}

/// Median with the midpoint convention for even-length input.
fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Empirical CDF samples: errors sorted ascending, fraction (i+1)/n.
fn cdf(errors: &[f64]) -> Vec<[f64; 2]> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, e)| [*e, (i as f64 + 1.0) / n])
        .collect()
}

fn summarize(d_errors: &[f64], theta_errors: &[f64]) -> (f64, f64, Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let d_cdf = cdf(d_errors);
    let theta_cdf = cdf(theta_errors);
    let med_d = median(&d_cdf.iter().map(|s| s[0]).collect::<Vec<_>>());
    let med_t = median(&theta_cdf.iter().map(|s| s[0]).collect::<Vec<_>>());
    (med_d, med_t, d_cdf, theta_cdf)
}

/// True local wall parameters for a frame: the nearest wall in front of the
/// true pose.
fn true_local_plane(record: &FrameRecord, line: usize) -> Result<LocalPlane, PipelineError> {
    let gt = record.gt.as_ref().ok_or(PipelineError::DataLine {
        line,
        msg: "frame has no ground truth; evaluation needs the gt sidecar".into(),
    })?;
    let pose = Pose2::new(gt.pose[0], gt.pose[1], gt.pose[2]);
    gt.planes
        .iter()
        .map(|w| {
            let plane = PlaneParams::new(w[0], w[1]).map_err(|e| PipelineError::DataLine {
                line,
                msg: format!("invalid ground-truth wall: {e}"),
            })?;
            Ok(local_plane_params(&pose, &plane))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?
        .into_iter()
        .filter(|l| l.d > 0.0)
        .min_by(|a, b| a.d.total_cmp(&b.d))
        .ok_or(PipelineError::DataLine {
            line,
            msg: "no wall in front of the true pose".into(),
        })
}

/// Computes absolute-error statistics of the estimate stream against the
/// dataset's ground truth, plus two baselines on the same truth: a seeded
/// uniform-random guesser and the fixed mid-range guess.
pub fn evaluate(
    estimates: &[EstimateRow],
    records: &[FrameRecord],
    seed: u64,
) -> Result<MetricsReport, PipelineError> {
    if estimates.len() != records.len() {
        return Err(PipelineError::Data(format!(
            "estimate stream has {} rows but the dataset has {} frames",
            estimates.len(),
            records.len()
        )));
    }
    if estimates.is_empty() {
        return Err(PipelineError::Data(
            "nothing to evaluate: estimate stream is empty".into(),
        ));
    }

    let mut d_errors = Vec::with_capacity(estimates.len());
    let mut theta_errors = Vec::with_capacity(estimates.len());
    let mut rand_d = Vec::with_capacity(estimates.len());
    let mut rand_t = Vec::with_capacity(estimates.len());
    let mut fixed_d = Vec::with_capacity(estimates.len());
    let mut fixed_t = Vec::with_capacity(estimates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, SeedStream::Baseline, 0));

    for (i, (row, record)) in estimates.iter().zip(records).enumerate() {
        if (row.t - record.t).abs() > 1e-9 {
            return Err(PipelineError::DataLine {
                line: i + 1,
                msg: format!(
                    "timestamp mismatch: estimates t={} vs dataset t={}",
                    row.t, record.t
                ),
            });
        }
        let truth = true_local_plane(record, i + 1)?;
        d_errors.push((row.d_mean - truth.d).abs());
        theta_errors.push(wrap_pi(row.theta_mean - truth.theta).abs());

        let guess_d: f64 = rng.random_range(0.0..RANDOM_GUESS_MAX_DISTANCE);
        let guess_t: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        rand_d.push((guess_d - truth.d).abs());
        rand_t.push(wrap_pi(guess_t - truth.theta).abs());
        fixed_d.push((FIXED_GUESS_DISTANCE - truth.d).abs());
        fixed_t.push(wrap_pi(0.0 - truth.theta).abs());
    }

    let (median_d_error, median_theta_error, d_cdf, theta_cdf) =
        summarize(&d_errors, &theta_errors);
    let (rmd, rmt, rdc, rtc) = summarize(&rand_d, &rand_t);
    let (fmd, fmt_, fdc, ftc) = summarize(&fixed_d, &fixed_t);

    Ok(MetricsReport {
        n_frames: estimates.len(),
        d_errors,
        theta_errors,
        median_d_error,
        median_theta_error,
        d_cdf,
        theta_cdf,
        baseline_random: BaselineReport {
            median_d_error: rmd,
            median_theta_error: rmt,
            d_cdf: rdc,
            theta_cdf: rtc,
        },
        baseline_fixed: BaselineReport {
            median_d_error: fmd,
            median_theta_error: fmt_,
            d_cdf: fdc,
            theta_cdf: ftc,
        },
        association_accuracy: None,
        runtime: None,
    })
}

/// Fraction of association decisions that attached a measurement to the
/// plane bound to the correct wall. Each plane node is bound to the true
/// wall nearest the true pose at its first association; later decisions are
/// correct when their plane's bound wall matches the frame's nearest wall.
pub fn association_accuracy(
    map: &MapOutput,
    records: &[FrameRecord],
) -> Result<Option<f64>, PipelineError> {
    if map.associations.is_empty() {
        return Ok(None);
    }
    let mut bound: Vec<Option<usize>> = vec![None; map.planes.len()];
    let mut correct = 0usize;
    for assoc in &map.associations {
        let (line, record) = records
            .iter()
            .enumerate()
            .find(|(_, r)| (r.t - assoc.t).abs() <= 1e-9)
            .map(|(i, r)| (i + 1, r))
            .ok_or(PipelineError::Data(format!(
                "association at t={} has no matching dataset frame",
                assoc.t
            )))?;
        let gt = record.gt.as_ref().ok_or(PipelineError::DataLine {
            line,
            msg: "frame has no ground truth".into(),
        })?;
        if gt.planes.is_empty() {
            return Ok(None);
        }
        let pose = Pose2::new(gt.pose[0], gt.pose[1], gt.pose[2]);
        let wall = gt
            .planes
            .iter()
            .enumerate()
            .filter_map(|(w, p)| {
                let plane = PlaneParams::new(p[0], p[1]).ok()?;
                let local = local_plane_params(&pose, &plane);
                (local.d > 0.0).then_some((w, local.d))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(w, _)| w)
            .ok_or(PipelineError::DataLine {
                line,
                msg: "no wall in front of the true pose".into(),
            })?;
        match bound[assoc.plane] {
            None => {
                bound[assoc.plane] = Some(wall);
                correct += 1;
            }
            Some(b) if b == wall => correct += 1,
            Some(_) => {}
        }
    }
    Ok(Some(correct as f64 / map.associations.len() as f64))
}

/// Writes the report as pretty-printed JSON.
pub fn write_metrics(report: &MetricsReport, mut writer: impl Write) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| PipelineError::Data(format!("serializing metrics: {e}")))?;
    writeln!(writer, "{text}").map_err(|e| PipelineError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::super::dataset::GroundTruth;
    use super::super::slam_run::AssociationRecord;
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Frames along a straight approach toward a single wall, with estimate
    /// rows reporting exactly the true local parameters.
    fn perfect_pair(n: usize) -> (Vec<EstimateRow>, Vec<FrameRecord>) {
        let wall = PlaneParams::new(0.57, 0.0).unwrap();
        let mut rows = Vec::new();
        let mut records = Vec::new();
        for i in 0..n {
            let pose = Pose2::new(0.01 * i as f64, 0.0, 0.0);
            let truth = local_plane_params(&pose, &wall);
            let t = i as f64;
            rows.push(EstimateRow {
                t,
                d_mean: truth.d,
                theta_mean: truth.theta,
                sigma_d: 0.01,
                sigma_theta: 0.1,
                n_eff: 400.0,
            });
            records.push(FrameRecord {
                t,
                pose: [pose.x, pose.y, pose.phi],
                freqs: vec![2000.0, 3000.0],
                mags: vec![vec![0.0; 2]; 4],
                gt: Some(GroundTruth {
                    pose: [pose.x, pose.y, pose.phi],
                    planes: vec![[wall.d, wall.theta]],
                }),
            });
        }
        (rows, records)
    }

    #[test]
    fn perfect_estimates_have_zero_error_and_step_cdf() {
        let (rows, records) = perfect_pair(12);
        let report = evaluate(&rows, &records, 1).unwrap();
        assert_eq!(report.n_frames, 12);
        assert!(report.d_errors.iter().all(|e| *e < 1e-12));
        assert!(report.theta_errors.iter().all(|e| *e < 1e-12));
        assert!(report.median_d_error < 1e-12);
        assert!(report.median_theta_error < 1e-12);
        // CDF is a step at zero: every sample sits at error ~0 and the
        // cumulative fraction ends at exactly 1.
        assert!(report.d_cdf.iter().all(|s| s[0] < 1e-12));
        assert_abs_diff_eq!(report.d_cdf.last().unwrap()[1], 1.0);
        assert_abs_diff_eq!(report.theta_cdf.last().unwrap()[1], 1.0);
    }

    /// Truth distances laid out uniformly over (0, 0.8): the fixed guess at
    /// 0.4 m then has |error| uniform over (0, 0.4), with median 0.2 m.
    #[test]
    fn fixed_guess_median_is_a_fifth_of_the_range() {
        let n = 400;
        let mut rows = Vec::new();
        let mut records = Vec::new();
        for i in 0..n {
            let d = (i as f64 + 0.5) * RANDOM_GUESS_MAX_DISTANCE / n as f64;
            let t = i as f64;
            rows.push(EstimateRow {
                t,
                d_mean: d,
                theta_mean: 0.0,
                sigma_d: 0.01,
                sigma_theta: 0.1,
                n_eff: 400.0,
            });
            records.push(FrameRecord {
                t,
                pose: [0.0, 0.0, 0.0],
                freqs: vec![2000.0],
                mags: vec![vec![0.0]; 4],
                gt: Some(GroundTruth {
                    pose: [0.0, 0.0, 0.0],
                    planes: vec![[d, 0.0]],
                }),
            });
        }
        let report = evaluate(&rows, &records, 1).unwrap();
        assert_abs_diff_eq!(report.baseline_fixed.median_d_error, 0.2, epsilon = 5e-3);
    }

    /// With the truth angle fixed, uniform random angle guesses have circular
    /// absolute error uniform over [0, π]: median 90°.
    #[test]
    fn random_angle_baseline_median_is_ninety_degrees() {
        let n = 4000;
        let (mut rows, mut records) = perfect_pair(n);
        for (row, record) in rows.iter_mut().zip(&mut records) {
            row.t = row.t.min(1e18);
            record.pose = [0.0, 0.0, 0.0];
            record.gt.as_mut().unwrap().pose = [0.0, 0.0, 0.0];
        }
        let report = evaluate(&rows, &records, 42).unwrap();
        assert_abs_diff_eq!(
            report.baseline_random.median_theta_error,
            std::f64::consts::FRAC_PI_2,
            epsilon = 0.06
        );
        // Distance guesses uniform over [0, 0.8] against truth 0.57:
        // median error is strictly between 0 and 0.57.
        assert!(report.baseline_random.median_d_error > 0.05);
        assert!(report.baseline_random.median_d_error < 0.5);
    }

    #[test]
    fn cdfs_are_monotone_with_unit_endpoint() {
        let (mut rows, records) = perfect_pair(40);
        // Perturb the estimates so errors are varied.
        for (i, row) in rows.iter_mut().enumerate() {
            row.d_mean += 0.001 * (i as f64 * 2.3).sin();
            row.theta_mean += 0.05 * (i as f64 * 1.7).cos();
        }
        let report = evaluate(&rows, &records, 9).unwrap();
        for cdf in [
            &report.d_cdf,
            &report.theta_cdf,
            &report.baseline_random.d_cdf,
            &report.baseline_random.theta_cdf,
            &report.baseline_fixed.d_cdf,
            &report.baseline_fixed.theta_cdf,
        ] {
            for pair in cdf.windows(2) {
                assert!(pair[1][0] >= pair[0][0], "errors not sorted");
                assert!(pair[1][1] > pair[0][1], "fractions not increasing");
            }
            assert_abs_diff_eq!(cdf.last().unwrap()[1], 1.0);
            assert!(cdf[0][1] > 0.0);
        }
        assert!(report.d_errors.iter().all(|e| *e >= 0.0));
        assert!(report.theta_errors.iter().all(|e| *e >= 0.0));
    }

    #[test]
    fn timestamp_mismatch_is_a_data_error() {
        let (mut rows, records) = perfect_pair(8);
        rows[5].t += 0.25;
        let err = evaluate(&rows, &records, 1).unwrap_err();
        match &err {
            PipelineError::DataLine { line, .. } => assert_eq!(*line, 6),
            other => panic!("unexpected error {other:?}"),
        }
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_ground_truth_is_a_data_error() {
        let (rows, mut records) = perfect_pair(4);
        records[2].gt = None;
        let err = evaluate(&rows, &records, 1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn same_seed_gives_identical_metric_bytes() {
        let (mut rows, records) = perfect_pair(20);
        for (i, row) in rows.iter_mut().enumerate() {
            row.d_mean += 0.002 * (i as f64).sin();
        }
        let a = evaluate(&rows, &records, 77).unwrap();
        let b = evaluate(&rows, &records, 77).unwrap();
        let mut ja = Vec::new();
        let mut jb = Vec::new();
        write_metrics(&a, &mut ja).unwrap();
        write_metrics(&b, &mut jb).unwrap();
        assert_eq!(ja, jb);
        let c = evaluate(&rows, &records, 78).unwrap();
        assert_ne!(
            a.baseline_random.median_d_error,
            c.baseline_random.median_d_error
        );
    }

    #[test]
    fn association_accuracy_scores_bindings() {
        let (_, records) = perfect_pair(6);
        // One wall only: every association to plane 0 is correct.
        let map = MapOutput {
            poses: vec![],
            planes: vec![[0.57, 0.0]],
            associations: vec![
                AssociationRecord {
                    t: 0.0,
                    plane: 0,
                    new: true,
                },
                AssociationRecord {
                    t: 1.0,
                    plane: 0,
                    new: false,
                },
                AssociationRecord {
                    t: 2.0,
                    plane: 0,
                    new: false,
                },
            ],
            final_cost: 0.0,
        };
        let acc = association_accuracy(&map, &records).unwrap();
        assert_abs_diff_eq!(acc.unwrap(), 1.0);
        // Empty association history → no accuracy to report.
        let empty = MapOutput {
            poses: vec![],
            planes: vec![],
            associations: vec![],
            final_cost: 0.0,
        };
        assert!(association_accuracy(&empty, &records).unwrap().is_none());
        // Unmatched timestamp → data error.
        let bad = MapOutput {
            poses: vec![],
            planes: vec![[0.57, 0.0]],
            associations: vec![AssociationRecord {
                t: 99.0,
                plane: 0,
                new: true,
            }],
            final_cost: 0.0,
        };
        assert_eq!(
            association_accuracy(&bad, &records)
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn runtime_stats_never_reach_the_serialized_report() {
        let (rows, records) = perfect_pair(5);
        let mut report = evaluate(&rows, &records, 1).unwrap();
        report.runtime = Some(RuntimeStats {
            total_s: 1.0,
            mean_frame_ms: 2.0,
            p95_frame_ms: 3.0,
        });
        let mut buf = Vec::new();
        write_metrics(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("runtime"));
    }
}
