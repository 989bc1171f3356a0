//! Online joint gain calibration and frame normalization.
//!
//! The product of speaker response, microphone response, and spreading loss
//! is unknown and entangled per frequency. While the robot moves, the
//! interference cosine sweeps through its phases, so a slow IIR average of
//! the squared magnitudes tracks the gain envelope. Dividing a frame by the
//! tracked gain and removing the per-mic mean leaves a zero-mean signal
//! whose dominant oscillation over frequency is the interference cosine —
//! exactly what the path-difference stage needs.

use crate::acoustics::SweepFrame;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default IIR coefficient.
pub const DEFAULT_LAMBDA: f64 = 0.3;

/// Frames required before normalized output is meaningful.
pub const DEFAULT_WARMUP_FRAMES: usize = 3;

/// Gain entries below this are treated as dead and masked out.
pub const GAIN_MASK_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("IIR coefficient must lie in (0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("frame has {got} magnitude rows/columns, gain state has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("calibration warmup incomplete: {have} frames seen, {need} required")]
    WarmupIncomplete { have: usize, need: usize },
}

/// Running estimate of the per-mic, per-frequency gain envelope, in
/// squared-magnitude units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainState {
    /// Per-mic, per-frequency gain estimate g̃ (squared-magnitude units).
    pub g_tilde: Vec<Vec<f64>>,
    /// IIR coefficient λ in (0, 1].
    pub lambda: f64,
    /// Frames absorbed so far.
    pub frame_count: usize,
    /// Frames required before [`normalize_frame`] yields output.
    pub warmup: usize,
}

impl GainState {
    pub fn new(lambda: f64) -> Result<Self, CalibrationError> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(CalibrationError::InvalidLambda(lambda));
        }
        Ok(GainState {
            g_tilde: Vec::new(),
            lambda,
            frame_count: 0,
            warmup: DEFAULT_WARMUP_FRAMES,
        })
    }

    /// True once enough frames have been absorbed for normalization.
    pub fn is_warm(&self) -> bool {
        self.frame_count >= self.warmup
    }
}

/// One microphone's normalized measurement: zero-mean values at the
/// surviving (unmasked) frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedChannel {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
}

/// Absorb one frame into the gain estimate:
/// `g̃ ← (1−λ) g̃ + λ y²` elementwise; the first frame initializes `g̃ = y²`.
pub fn update_gain(state: &GainState, frame: &SweepFrame) -> Result<GainState, CalibrationError> {
    let mut next = state.clone();
    if state.frame_count == 0 {
        next.g_tilde = frame
            .mags
            .iter()
            .map(|row| row.iter().map(|y| y * y).collect())
            .collect();
    } else {
        if frame.mags.len() != state.g_tilde.len() {
            return Err(CalibrationError::DimensionMismatch {
                expected: state.g_tilde.len(),
                got: frame.mags.len(),
            });
        }
        for (g_row, y_row) in next.g_tilde.iter_mut().zip(&frame.mags) {
            if y_row.len() != g_row.len() {
                return Err(CalibrationError::DimensionMismatch {
                    expected: g_row.len(),
                    got: y_row.len(),
                });
            }
            for (g, y) in g_row.iter_mut().zip(y_row) {
                *g = (1.0 - state.lambda) * *g + state.lambda * y * y;
            }
        }
    }
    next.frame_count += 1;
    Ok(next)
}

/// Normalize a frame against the tracked gain: per mic,
/// `ŷ = y²/g̃ − mean_f(y²/g̃)` over the frequencies whose gain exceeds
/// [`GAIN_MASK_EPS`]; masked frequencies are dropped from the output.
pub fn normalize_frame(
    state: &GainState,
    frame: &SweepFrame,
) -> Result<Vec<NormalizedChannel>, CalibrationError> {
    if !state.is_warm() {
        return Err(CalibrationError::WarmupIncomplete {
            have: state.frame_count,
            need: state.warmup,
        });
    }
    if frame.mags.len() != state.g_tilde.len() {
        return Err(CalibrationError::DimensionMismatch {
            expected: state.g_tilde.len(),
            got: frame.mags.len(),
        });
    }
    let mut channels = Vec::with_capacity(frame.mags.len());
    for (g_row, y_row) in state.g_tilde.iter().zip(&frame.mags) {
        if y_row.len() != g_row.len() {
            return Err(CalibrationError::DimensionMismatch {
                expected: g_row.len(),
                got: y_row.len(),
            });
        }
        let mut freqs = Vec::new();
        let mut values = Vec::new();
        for ((&g, &y), &f) in g_row.iter().zip(y_row).zip(&frame.freqs) {
            if g >= GAIN_MASK_EPS {
                freqs.push(f);
                values.push(y * y / g);
            }
        }
        if !values.is_empty() {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            for v in &mut values {
                *v -= mean;
            }
        }
        channels.push(NormalizedChannel { freqs, values });
    }
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::{
        make_interference_matrix, simulate_sweep_frame, AcousticConfig, SweepSchedule,
    };
    use crate::geometry::{MicGeometry, PlaneParams, Pose2};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn frame_from_mags(freqs: &[f64], mags: Vec<Vec<f64>>) -> SweepFrame {
        SweepFrame {
            timestamp: 0.0,
            pose_estimate: Pose2::identity(),
            freqs: freqs.to_vec(),
            mags,
        }
    }

    #[test]
    fn first_frame_initializes_gain_to_squared_magnitudes() {
        let state = GainState::new(0.3).unwrap();
        let frame = frame_from_mags(&[2000.0, 3000.0], vec![vec![2.0, 3.0]]);
        let next = update_gain(&state, &frame).unwrap();
        assert_eq!(next.g_tilde, vec![vec![4.0, 9.0]]);
        assert_eq!(next.frame_count, 1);
    }

    #[test]
    fn one_step_from_forced_zero_gain() {
        let mut state = GainState::new(0.3).unwrap();
        state.g_tilde = vec![vec![0.0]];
        state.frame_count = 1;
        let frame = frame_from_mags(&[2000.0], vec![vec![1.0]]);
        let next = update_gain(&state, &frame).unwrap();
        assert_relative_eq!(next.g_tilde[0][0], 0.3);
    }

    #[test]
    fn constant_input_converges_geometrically() {
        // After the first frame seeds g̃ = a², constant input b gives
        // g̃_n − b² = (1−λ)^(n-1) (a² − b²) exactly.
        let lambda = 0.3;
        let mut state = GainState::new(lambda).unwrap();
        let seed_frame = frame_from_mags(&[2000.0], vec![vec![3.0]]);
        let const_frame = frame_from_mags(&[2000.0], vec![vec![1.0]]);
        state = update_gain(&state, &seed_frame).unwrap();
        for n in 1..20 {
            state = update_gain(&state, &const_frame).unwrap();
            let expected_gap = (1.0 - lambda).powi(n) * (9.0 - 1.0);
            assert_relative_eq!(state.g_tilde[0][0] - 1.0, expected_gap, epsilon = 1e-12);
        }
    }

    #[test]
    fn gain_tracks_mean_envelope_over_a_full_interference_period() {
        // Frames sampled while the wall distance sweeps two full periods of
        // the interference cosine: the IIR estimate should settle near the
        // arithmetic mean envelope. Small lambda separates the envelope
        // timescale from the oscillation.
        let mics = MicGeometry::from_coords(&[[0.04, 0.04], [-0.04, 0.04]]).unwrap();
        let sched = SweepSchedule::default_sweep();
        let mut cfg = AcousticConfig::unit(343.0, 0.2, mics.len(), sched.n_freqs(), 0.0);
        for (k, g) in cfg.mic_gains[1].iter_mut().enumerate() {
            *g = 1.0 + 0.5 * (k as f64 / 7.0).sin(); // non-flat gain profile
        }
        // Period of cos(2π f · 2d / c) in d at mid-band ~3.2 kHz: c/(2f) ≈ 5.3 cm.
        let period = 343.0 / (2.0 * 3250.0);
        let n_frames = 60;
        let mut state = GainState::new(0.05).unwrap();
        let mut sum = vec![vec![0.0; sched.n_freqs()]; mics.len()];
        for i in 0..n_frames {
            let d = 0.40 - 2.0 * period * i as f64 / n_frames as f64;
            let plane = PlaneParams::new(d, 0.0).unwrap();
            let frame =
                simulate_sweep_frame(&Pose2::identity(), &[plane], &mics, &cfg, &sched, 0).unwrap();
            for (s_row, y_row) in sum.iter_mut().zip(&frame.mags) {
                for (s, y) in s_row.iter_mut().zip(y_row) {
                    *s += y * y / n_frames as f64;
                }
            }
            state = update_gain(&state, &frame).unwrap();
        }
        for (g_row, mean_row) in state.g_tilde.iter().zip(&sum) {
            for (g, mean) in g_row.iter().zip(mean_row) {
                assert!(
                    (g - mean).abs() / mean < 0.10,
                    "gain {g} vs mean envelope {mean}"
                );
            }
        }
    }

    #[test]
    fn perfectly_calibrated_frame_normalizes_to_zero() {
        let mut state = GainState::new(0.3).unwrap();
        state.g_tilde = vec![vec![4.0, 9.0, 16.0]];
        state.frame_count = 5;
        let frame = frame_from_mags(&[2000.0, 3000.0, 4000.0], vec![vec![2.0, 3.0, 4.0]]);
        let channels = normalize_frame(&state, &frame).unwrap();
        for v in &channels[0].values {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalization_recovers_path_difference_with_true_gain() {
        // With g̃ forced to the true envelope (interference cosine removed),
        // a least-squares scan over Δ of the normalized frame must land
        // within one grid bin of the true path difference.
        let mics = MicGeometry::from_coords(&[[0.0, 0.04]]).unwrap();
        let sched = SweepSchedule::default_sweep();
        let cfg = AcousticConfig::unit(343.0, 0.2, 1, sched.n_freqs(), 0.0);
        let d = 0.3;
        let plane = PlaneParams::new(d, 0.0).unwrap();
        let frame =
            simulate_sweep_frame(&Pose2::identity(), &[plane], &mics, &cfg, &sched, 0).unwrap();
        let ell = mics.ell(0);
        let local = crate::geometry::LocalPlane::new(d, 0.0);
        let r = crate::geometry::reflected_path_length(ell, mics.bearing(0), &local);
        let delta_true = r - ell;
        // Envelope = squared magnitude with the cosine term zeroed.
        let base = 1.0 / (4.0 * std::f64::consts::PI);
        let envelope = base * base * (1.0 / (ell * ell) + 0.8 * 0.8 / (r * r));
        let mut state = GainState::new(0.3).unwrap();
        state.g_tilde = vec![vec![envelope; sched.n_freqs()]];
        state.frame_count = 5;
        let channels = normalize_frame(&state, &frame).unwrap();

        let delta_max = 343.0 / (2.0 * sched.mean_spacing());
        let n_grid = 512;
        let step = delta_max / (n_grid - 1) as f64;
        let mut best = (f64::MAX, 0.0);
        for i in 0..n_grid {
            let delta = i as f64 * step;
            let residual = crate::testutil::cosine_fit_residual(
                &channels[0].freqs,
                &channels[0].values,
                delta.max(1e-9),
                343.0,
            );
            if residual < best.0 {
                best = (residual, delta);
            }
        }
        assert!(
            (best.1 - delta_true).abs() <= step,
            "scan found {} vs true {delta_true} (step {step})",
            best.1
        );
    }

    #[test]
    fn dead_frequency_is_masked() {
        let mut state = GainState::new(0.3).unwrap();
        state.g_tilde = vec![vec![1.0, 0.0, 1.0]];
        state.frame_count = 3;
        let frame = frame_from_mags(&[2000.0, 3000.0, 4000.0], vec![vec![1.0, 0.0, 2.0]]);
        let channels = normalize_frame(&state, &frame).unwrap();
        assert_eq!(channels[0].freqs, vec![2000.0, 4000.0]);
        assert_eq!(channels[0].values.len(), 2);
    }

    #[test]
    fn normalize_requires_warmup() {
        let mut state = GainState::new(0.3).unwrap();
        state.g_tilde = vec![vec![1.0]];
        state.frame_count = 2;
        let frame = frame_from_mags(&[2000.0], vec![vec![1.0]]);
        assert_eq!(
            normalize_frame(&state, &frame).unwrap_err(),
            CalibrationError::WarmupIncomplete { have: 2, need: 3 }
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut state = GainState::new(0.3).unwrap();
        state.g_tilde = vec![vec![1.0, 1.0]];
        state.frame_count = 4;
        let frame = frame_from_mags(&[2000.0], vec![vec![1.0]]);
        assert!(matches!(
            normalize_frame(&state, &frame),
            Err(CalibrationError::DimensionMismatch { .. })
        ));
        let frame2 = frame_from_mags(&[2000.0, 3000.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(
            update_gain(&state, &frame2),
            Err(CalibrationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lambda_validation() {
        assert!(GainState::new(0.0).is_err());
        assert!(GainState::new(1.1).is_err());
        assert!(GainState::new(1.0).is_ok());
    }

    #[test]
    fn interference_matrix_feeds_calibration() {
        // Envelope tracking off matrix rows: same magnitudes as frames.
        let mics = MicGeometry::from_coords(&[[0.0, 0.04]]).unwrap();
        let sched = SweepSchedule::default_sweep();
        let cfg = AcousticConfig::unit(343.0, 0.2, 1, sched.n_freqs(), 0.0);
        let matrix = make_interference_matrix(&[0.3, 0.29, 0.28], &sched, &mics, &cfg).unwrap();
        let mut state = GainState::new(0.3).unwrap();
        for row in &matrix[0] {
            let frame = frame_from_mags(&sched.freqs, vec![row.clone()]);
            state = update_gain(&state, &frame).unwrap();
        }
        assert!(state.is_warm());
    }

    proptest! {
        #[test]
        fn normalization_is_scale_invariant(scale in 0.01f64..100.0) {
            // Scaling every input magnitude rescales g̃ along with it, so
            // the normalized output is unchanged.
            let mics = MicGeometry::from_coords(&[[0.0, 0.04], [0.03, 0.0]]).unwrap();
            let sched = SweepSchedule::default_sweep();
            let cfg = AcousticConfig::unit(343.0, 0.2, 2, sched.n_freqs(), 0.0);
            let run = |s: f64| {
                let mut state = GainState::new(0.3).unwrap();
                let mut last = None;
                for i in 0..5 {
                    let d = 0.35 - 0.01 * i as f64;
                    let plane = PlaneParams::new(d, 0.0).unwrap();
                    let mut frame = simulate_sweep_frame(
                        &Pose2::identity(), &[plane], &mics, &cfg, &sched, 0,
                    ).unwrap();
                    for row in &mut frame.mags {
                        for v in row.iter_mut() {
                            *v *= s;
                        }
                    }
                    state = update_gain(&state, &frame).unwrap();
                    if state.is_warm() {
                        last = Some(normalize_frame(&state, &frame).unwrap());
                    }
                }
                last.unwrap()
            };
            let base = run(1.0);
            let scaled = run(scale);
            for (a, b) in base.iter().zip(&scaled) {
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
                }
            }
        }

        #[test]
        fn normalized_output_has_zero_mean(
            d in 0.1f64..0.7,
            rho in 0.0f64..0.9,
        ) {
            let mics = MicGeometry::from_coords(&[[0.0, 0.04]]).unwrap();
            let sched = SweepSchedule::default_sweep();
            let cfg = AcousticConfig::unit(343.0, rho, 1, sched.n_freqs(), 0.0);
            let mut state = GainState::new(0.3).unwrap();
            let mut frame = None;
            for i in 0..4 {
                let plane = PlaneParams::new(d + 0.005 * i as f64, 0.0).unwrap();
                let f = simulate_sweep_frame(
                    &Pose2::identity(), &[plane], &mics, &cfg, &sched, 0,
                ).unwrap();
                state = update_gain(&state, &f).unwrap();
                frame = Some(f);
            }
            let channels = normalize_frame(&state, &frame.unwrap()).unwrap();
            let mean: f64 =
                channels[0].values.iter().sum::<f64>() / channels[0].values.len() as f64;
            prop_assert!(mean.abs() < 1e-12);
        }
    }
}
