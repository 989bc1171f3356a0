//! Estimation runs: replay a dataset through calibration, the
//! path-difference posterior, and the particle filter, emitting one CSV row
//! of wall-estimate moments per frame.

use super::{config::ExperimentConfig, dataset::FrameRecord};
use super::{sub_seed, PipelineError, SeedStream};
use crate::calibration::{normalize_frame, update_gain, GainState};
use crate::filter::{
    estimate_moments, init_particles, predict, resample_stratified, update_weights, RelativeMotion,
};
use crate::pathdiff::{delta_distribution, max_distance, DeltaGrid, PathDiffDistribution};
use std::io::Write;
use std::time::Instant;

/// CSV header for estimate streams.
pub const ESTIMATES_HEADER: &str = "t,d_mean,theta_mean,sigma_d,sigma_theta,n_eff";

/// One row of the estimates stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub d_mean: f64,
    pub theta_mean: f64,
    pub sigma_d: f64,
    pub sigma_theta: f64,
    pub n_eff: f64,
}

impl EstimateRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.t, self.d_mean, self.theta_mean, self.sigma_d, self.sigma_theta, self.n_eff
        )
    }

    fn parse(line: &str, line_no: usize) -> Result<Self, PipelineError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(PipelineError::DataLine {
                line: line_no,
                msg: format!("expected 6 CSV fields, got {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 6];
        for (i, f) in fields.iter().enumerate() {
            values[i] = f.trim().parse().map_err(|e| PipelineError::DataLine {
                line: line_no,
                msg: format!("field {}: {e}", i + 1),
            })?;
        }
        Ok(EstimateRow {
            t: values[0],
            d_mean: values[1],
            theta_mean: values[2],
            sigma_d: values[3],
            sigma_theta: values[4],
            n_eff: values[5],
        })
    }
}

/// Reads an estimates CSV (header required).
pub fn read_estimates(reader: impl std::io::BufRead) -> Result<Vec<EstimateRow>, PipelineError> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| PipelineError::DataLine {
            line: line_no,
            msg: e.to_string(),
        })?;
        let trimmed = text.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !saw_header {
            if trimmed != ESTIMATES_HEADER {
                return Err(PipelineError::DataLine {
                    line: line_no,
                    msg: format!("expected header '{ESTIMATES_HEADER}'"),
                });
            }
            saw_header = true;
            continue;
        }
        rows.push(EstimateRow::parse(trimmed, line_no)?);
    }
    if !saw_header && !rows.is_empty() {
        unreachable!("rows cannot precede the header");
    }
    Ok(rows)
}

/// Timing summary of an estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationStats {
    /// Rows written (one per frame).
    pub frames: usize,
    /// Wall-clock duration of each frame's full cycle, milliseconds.
    pub frame_ms: Vec<f64>,
}

/// Replays dataset records through the estimation chain and writes CSV.
///
/// Per frame: gain update → (once calibrated) normalization and per-mic
/// path-difference distributions → particle predict/update → moments row →
/// stratified resample. During calibration warmup the row reflects the
/// predicted prior. `mics_limit` restricts processing to the first k
/// microphones.
pub fn run_estimation(
    records: &[FrameRecord],
    cfg: &ExperimentConfig,
    mics_limit: Option<usize>,
    mut writer: impl Write,
) -> Result<EstimationStats, PipelineError> {
    cfg.validate()?;
    writeln!(writer, "{ESTIMATES_HEADER}").map_err(|e| PipelineError::Data(e.to_string()))?;
    let mut stats = EstimationStats {
        frames: 0,
        frame_ms: Vec::new(),
    };
    if records.is_empty() {
        return Ok(stats);
    }

    let full_mics = cfg.mic_geometry()?;
    let n_available = records[0].mags.len();
    if n_available != full_mics.len() {
        return Err(PipelineError::Data(format!(
            "dataset has {} microphone channels but the config defines {}",
            n_available,
            full_mics.len()
        )));
    }
    let k = mics_limit.unwrap_or(full_mics.len());
    if k == 0 || k > full_mics.len() {
        return Err(PipelineError::Config(format!(
            "--mics must be in 1..={}, got {k}",
            full_mics.len()
        )));
    }
    let mics = full_mics
        .take(k)
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let freqs = records[0].freqs.clone();
    let grid = DeltaGrid::for_band(&freqs, cfg.acoustics.c, cfg.filter.grid_points)
        .map_err(|e| PipelineError::Data(format!("path-difference grid: {e}")))?;
    let d_max = max_distance(&freqs, &mics, cfg.acoustics.c)
        .map_err(|e| PipelineError::Data(format!("distance bound: {e}")))?;

    let mut particles = init_particles(
        cfg.filter.particles,
        d_max,
        sub_seed(cfg.seed, SeedStream::FilterInit, 0),
    );
    let mut gain = GainState::new(crate::calibration::DEFAULT_LAMBDA)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut prev_pose = None;

    for (i, record) in records.iter().enumerate() {
        let start = Instant::now();
        let frame = record.to_sweep_frame(k);
        gain = update_gain(&gain, &frame).map_err(|e| PipelineError::DataLine {
            line: i + 1,
            msg: format!("calibration: {e}"),
        })?;

        let pose = record.pose_estimate();
        let motion = match prev_pose {
            Some(prev) => RelativeMotion::between(&prev, &pose),
            None => RelativeMotion::none(),
        };
        predict(&mut particles, &motion, cfg.filter.inject_frac);

        let mut updated = false;
        if gain.is_warm() {
            let channels = normalize_frame(&gain, &frame).map_err(|e| PipelineError::DataLine {
                line: i + 1,
                msg: format!("normalization: {e}"),
            })?;
            let dists: Vec<PathDiffDistribution> = channels
                .iter()
                .map(|ch| delta_distribution(&ch.values, &ch.freqs, &grid, cfg.acoustics.c))
                .collect::<Result<_, _>>()
                .map_err(|e| PipelineError::DataLine {
                    line: i + 1,
                    msg: format!("path-difference posterior: {e}"),
                })?;
            update_weights(&mut particles, &dists, &mics).map_err(|e| PipelineError::DataLine {
                line: i + 1,
                msg: format!("weight update: {e}"),
            })?;
            updated = true;
        }

        let est = estimate_moments(&particles);
        let row = EstimateRow {
            t: record.t,
            d_mean: est.d_mean,
            theta_mean: est.theta_mean,
            sigma_d: est.sigma_d,
            sigma_theta: est.sigma_theta,
            n_eff: particles.effective_sample_size(),
        };
        writeln!(writer, "{}", row.to_csv()).map_err(|e| PipelineError::Data(e.to_string()))?;

        if updated {
            resample_stratified(
                &mut particles,
                sub_seed(cfg.seed, SeedStream::Resample, i as u64),
            );
        }
        prev_pose = Some(pose);
        stats.frames += 1;
        stats.frame_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::super::dataset::read_dataset;
    use super::super::simulate::run_simulation;
    use super::*;
    use crate::geometry::wrap_pi;
    use std::io::BufReader;

    fn median(values: &mut [f64]) -> f64 {
        values.sort_by(f64::total_cmp);
        let n = values.len();
        if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        }
    }

    fn stepper_errors(
        cfg: &ExperimentConfig,
        mics_limit: Option<usize>,
        skip: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut data = Vec::new();
        run_simulation(cfg, &mut data).unwrap();
        let records = read_dataset(BufReader::new(data.as_slice())).unwrap();
        let mut csv = Vec::new();
        run_estimation(&records, cfg, mics_limit, &mut csv).unwrap();
        let rows = read_estimates(BufReader::new(csv.as_slice())).unwrap();
        assert_eq!(rows.len(), records.len());
        let mut d_errors = Vec::new();
        let mut theta_errors = Vec::new();
        for (row, record) in rows.iter().zip(&records).skip(skip) {
            let gt = record.gt.as_ref().unwrap();
            let pose = crate::geometry::Pose2::new(gt.pose[0], gt.pose[1], gt.pose[2]);
            let (d_true, theta_true) = gt
                .planes
                .iter()
                .map(|&[d, th]| {
                    let local = crate::geometry::local_plane_params(
                        &pose,
                        &crate::geometry::PlaneParams::new(d, th).unwrap(),
                    );
                    (local.d, local.theta)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap();
            d_errors.push((row.d_mean - d_true).abs());
            theta_errors.push(wrap_pi(row.theta_mean - theta_true).abs());
        }
        (d_errors, theta_errors)
    }

    #[test]
    fn noise_free_stepper_median_error_under_1cm() {
        let cfg = ExperimentConfig::stepper();
        let (mut d_errors, _) = stepper_errors(&cfg, None, 5);
        let med = median(&mut d_errors);
        assert!(med < 0.01, "median distance error {med} m");
    }

    #[test]
    fn single_mic_stays_under_5cm_median() {
        let mut cfg = ExperimentConfig::stepper();
        cfg.seed = 7;
        let (mut d_errors, _) = stepper_errors(&cfg, Some(1), 5);
        let med = median(&mut d_errors);
        assert!(med < 0.05, "median distance error {med} m with one mic");
    }

    #[test]
    fn empty_dataset_gives_header_only() {
        let cfg = ExperimentConfig::stepper();
        let mut csv = Vec::new();
        let stats = run_estimation(&[], &cfg, None, &mut csv).unwrap();
        assert_eq!(stats.frames, 0);
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.trim(), ESTIMATES_HEADER);
        let rows = read_estimates(BufReader::new(text.as_bytes())).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn mics_limit_validated() {
        let cfg = ExperimentConfig::stepper();
        let mut data = Vec::new();
        run_simulation(&cfg, &mut data).unwrap();
        let records = read_dataset(BufReader::new(data.as_slice())).unwrap();
        let err = run_estimation(&records, &cfg, Some(9), Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = run_estimation(&records, &cfg, Some(0), Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let row = EstimateRow {
            t: 1.25,
            d_mean: 0.3,
            theta_mean: 0.7853981633974483,
            sigma_d: 0.01,
            sigma_theta: 0.2,
            n_eff: 123.45,
        };
        let text = format!("{ESTIMATES_HEADER}\n{}\n", row.to_csv());
        let rows = read_estimates(BufReader::new(text.as_bytes())).unwrap();
        assert_eq!(rows, vec![row]);
    }

    #[test]
    fn csv_schema_errors_carry_line_numbers() {
        let text = format!("{ESTIMATES_HEADER}\n1.0,2.0,3.0\n");
        let err = read_estimates(BufReader::new(text.as_bytes())).unwrap_err();
        match err {
            PipelineError::DataLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let err = read_estimates(BufReader::new(b"bogus,header\n".as_slice())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn estimation_is_deterministic() {
        let mut cfg = ExperimentConfig::flight();
        cfg.seed = 99;
        let mut data = Vec::new();
        run_simulation(&cfg, &mut data).unwrap();
        let records = read_dataset(BufReader::new(data.as_slice())).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        run_estimation(&records, &cfg, None, &mut a).unwrap();
        run_estimation(&records, &cfg, None, &mut b).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn mic_count_mismatch_is_a_data_error() {
        let cfg = ExperimentConfig::stepper();
        let mut data = Vec::new();
        run_simulation(&cfg, &mut data).unwrap();
        let mut records = read_dataset(BufReader::new(data.as_slice())).unwrap();
        for r in &mut records {
            r.mags.pop();
        }
        let err = run_estimation(&records, &cfg, None, Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
