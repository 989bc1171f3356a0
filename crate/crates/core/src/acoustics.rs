//! Forward simulation of microphone measurements and spectral extraction.
//!
//! The speaker plays one tone per buffer; each microphone hears the direct
//! sound plus a first-order echo off the nearest wall. Interference between
//! the two paths makes the received magnitude oscillate over frequency with
//! period `c / Δ`, where `Δ` is the echo path-length difference. This module
//! simulates those magnitudes (closed form and time domain) and extracts
//! single-bin magnitudes from waveforms with a flattop window, mimicking the
//! embedded front end.

use crate::geometry::{local_plane_params, reflected_path_length, LocalPlane, MicGeometry, Pose2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Lower clamp on path lengths in amplitude denominators, in meters.
///
/// Keeps the `1/ℓ` spreading terms finite for co-located (ℓ = 0)
/// microphones; phase terms always use the true path difference.
pub const MIN_AMPLITUDE_PATH: f64 = 1e-3;

/// Flattop window coefficients (5-term set).
const FLATTOP_COEFFS: [f64; 5] = [
    0.215_578_95,
    0.416_631_58,
    0.277_263_158,
    0.083_578_947,
    0.006_947_368,
];

/// Errors from acoustic configuration and simulation.
#[derive(Debug, Error, PartialEq)]
pub enum AcousticsError {
    #[error("speed of sound must be positive, got {0}")]
    InvalidSpeed(f64),
    #[error("absorption coefficient must lie in [0, 1], got {0}")]
    InvalidAbsorption(f64),
    #[error("gains, source spectrum, and noise std must be nonnegative")]
    NegativeAmplitude,
    #[error("sweep schedule needs at least 2 frequencies, got {0}")]
    TooFewFrequencies(usize),
    #[error("sweep frequencies must be strictly ascending")]
    NotAscending,
    #[error("frequency {freq} Hz is not a multiple of the bin width {bin_width} Hz")]
    NotBinAligned { freq: f64, bin_width: f64 },
    #[error("frequency {0} Hz must lie strictly between 0 and Nyquist {1} Hz")]
    OutOfBand(f64, f64),
    #[error("config has {got} per-frequency entries, schedule has {expected}")]
    SpectrumLengthMismatch { expected: usize, got: usize },
    #[error("config has gains for {got} microphones, array has {expected}")]
    MicCountMismatch { expected: usize, got: usize },
    #[error("pose lies beyond the nearest wall (local distance {0} m)")]
    PoseBeyondWall(f64),
    #[error("waveform has {got} samples, need at least buffer_len = {need}")]
    WaveformTooShort { got: usize, need: usize },
    #[error("schedule cannot fit {requested} distinct bins between {lo} and {hi} Hz")]
    BandTooNarrow { requested: usize, lo: f64, hi: f64 },
}

/// Physical and front-end parameters of the acoustic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticConfig {
    /// Speed of sound in m/s.
    pub c: f64,
    /// Wall absorption coefficient in [0, 1]; the echo amplitude scales
    /// with `1 − rho`.
    pub rho: f64,
    /// Per-frequency source magnitude |ŝ(f)|, aligned with the schedule.
    pub source_spectrum: Vec<f64>,
    /// Per-microphone, per-frequency gains g(f).
    pub mic_gains: Vec<Vec<f64>>,
    /// Standard deviation of additive magnitude noise.
    pub noise_std: f64,
}

impl AcousticConfig {
    pub fn new(
        c: f64,
        rho: f64,
        source_spectrum: Vec<f64>,
        mic_gains: Vec<Vec<f64>>,
        noise_std: f64,
    ) -> Result<Self, AcousticsError> {
        if c <= 0.0 {
            return Err(AcousticsError::InvalidSpeed(c));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(AcousticsError::InvalidAbsorption(rho));
        }
        let nonneg = |v: &[f64]| v.iter().all(|&x| x >= 0.0);
        if noise_std < 0.0 || !nonneg(&source_spectrum) || !mic_gains.iter().all(|g| nonneg(g)) {
            return Err(AcousticsError::NegativeAmplitude);
        }
        Ok(AcousticConfig {
            c,
            rho,
            source_spectrum,
            mic_gains,
            noise_std,
        })
    }

    /// Unit gains and flat source spectrum for `n_mics` microphones and
    /// `n_freqs` sweep frequencies.
    pub fn unit(c: f64, rho: f64, n_mics: usize, n_freqs: usize, noise_std: f64) -> Self {
        AcousticConfig::new(
            c,
            rho,
            vec![1.0; n_freqs],
            vec![vec![1.0; n_freqs]; n_mics],
            noise_std,
        )
        .expect("unit configuration is always valid")
    }

    fn check_dims(&self, n_mics: usize, n_freqs: usize) -> Result<(), AcousticsError> {
        if self.source_spectrum.len() != n_freqs {
            return Err(AcousticsError::SpectrumLengthMismatch {
                expected: n_freqs,
                got: self.source_spectrum.len(),
            });
        }
        if self.mic_gains.len() != n_mics {
            return Err(AcousticsError::MicCountMismatch {
                expected: n_mics,
                got: self.mic_gains.len(),
            });
        }
        for g in &self.mic_gains {
            if g.len() != n_freqs {
                return Err(AcousticsError::SpectrumLengthMismatch {
                    expected: n_freqs,
                    got: g.len(),
                });
            }
        }
        Ok(())
    }
}

/// Piecewise-constant frequency sweep: which bins the buzzer visits and the
/// DFT buffer geometry used to measure them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSchedule {
    /// Ascending, bin-aligned sweep frequencies in Hz.
    pub freqs: Vec<f64>,
    /// Samples per measurement buffer.
    pub buffer_len: usize,
    /// Sample rate in Hz.
    pub sample_rate: f64,
}

impl SweepSchedule {
    pub fn new(
        freqs: Vec<f64>,
        buffer_len: usize,
        sample_rate: f64,
    ) -> Result<Self, AcousticsError> {
        if freqs.len() < 2 {
            return Err(AcousticsError::TooFewFrequencies(freqs.len()));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AcousticsError::NotAscending);
        }
        let bin_width = sample_rate / buffer_len as f64;
        let nyquist = sample_rate / 2.0;
        for &f in &freqs {
            if f <= 0.0 || f >= nyquist {
                return Err(AcousticsError::OutOfBand(f, nyquist));
            }
            let k = f / bin_width;
            if (k - k.round()).abs() > 1e-6 {
                return Err(AcousticsError::NotBinAligned { freq: f, bin_width });
            }
        }
        Ok(SweepSchedule {
            freqs,
            buffer_len,
            sample_rate,
        })
    }

    /// `n` roughly uniformly spaced bin-aligned frequencies inside
    /// `[f_lo, f_hi]` Hz.
    pub fn bin_aligned(
        f_lo: f64,
        f_hi: f64,
        n: usize,
        buffer_len: usize,
        sample_rate: f64,
    ) -> Result<Self, AcousticsError> {
        let bin_width = sample_rate / buffer_len as f64;
        let k_lo = (f_lo / bin_width).ceil() as i64;
        let k_hi = (f_hi / bin_width).floor() as i64;
        if n < 2 || k_hi - k_lo + 1 < n as i64 {
            return Err(AcousticsError::BandTooNarrow {
                requested: n,
                lo: f_lo,
                hi: f_hi,
            });
        }
        let freqs = (0..n)
            .map(|i| {
                let k = k_lo as f64 + i as f64 * (k_hi - k_lo) as f64 / (n as f64 - 1.0);
                k.round() * bin_width
            })
            .collect();
        SweepSchedule::new(freqs, buffer_len, sample_rate)
    }

    /// Default sweep: 32 frequencies in [2000, 4500] Hz, 2048-sample
    /// buffers at 48 kHz.
    pub fn default_sweep() -> Self {
        SweepSchedule::bin_aligned(2000.0, 4500.0, 32, 2048, 48_000.0)
            .expect("default band fits 32 bins")
    }

    /// Shorter sweep used by the flight scenario: 20 frequencies in the
    /// same band.
    pub fn flight_sweep() -> Self {
        SweepSchedule::bin_aligned(2000.0, 4500.0, 20, 2048, 48_000.0)
            .expect("default band fits 20 bins")
    }

    pub fn n_freqs(&self) -> usize {
        self.freqs.len()
    }

    /// DFT bin width in Hz.
    pub fn bin_width(&self) -> f64 {
        self.sample_rate / self.buffer_len as f64
    }

    /// Mean spacing between consecutive sweep frequencies in Hz.
    pub fn mean_spacing(&self) -> f64 {
        (self.freqs[self.freqs.len() - 1] - self.freqs[0]) / (self.freqs.len() - 1) as f64
    }
}

/// One sweep's worth of per-microphone magnitude measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFrame {
    /// Frame timestamp in seconds.
    pub timestamp: f64,
    /// Odometry pose estimate attached to the frame (not ground truth).
    pub pose_estimate: Pose2,
    /// Sweep frequencies in Hz.
    pub freqs: Vec<f64>,
    /// `n_mics × n_freqs` magnitudes, nonnegative.
    pub mags: Vec<Vec<f64>>,
}

/// Noise-free interference magnitude for one microphone at one frequency.
///
/// Direct term only when `local` is `None`; otherwise the square root of
/// the two-path interference power
/// `(g|ŝ|/4π)² (1/ℓ² + (1−ρ)²/r² + 2(1−ρ)/(ℓr) cos(2πfΔ/c))` with
/// `Δ = r − ℓ`. Amplitude denominators are clamped at
/// [`MIN_AMPLITUDE_PATH`]; the phase uses the true `Δ`.
pub fn model_magnitude(
    mic_ell: f64,
    mic_bearing: f64,
    local: Option<&LocalPlane>,
    freq: f64,
    gain: f64,
    source_mag: f64,
    rho: f64,
    c: f64,
) -> f64 {
    let base = gain * source_mag / (4.0 * PI);
    let ell_amp = mic_ell.max(MIN_AMPLITUDE_PATH);
    match local {
        None => base / ell_amp,
        Some(plane) => {
            let r = reflected_path_length(mic_ell, mic_bearing, plane);
            let r_amp = r.max(MIN_AMPLITUDE_PATH);
            let delta = r - mic_ell;
            let echo = 1.0 - rho;
            let sq = base
                * base
                * (1.0 / (ell_amp * ell_amp)
                    + echo * echo / (r_amp * r_amp)
                    + 2.0 * echo / (ell_amp * r_amp) * (2.0 * PI * freq * delta / c).cos());
            sq.max(0.0).sqrt()
        }
    }
}

/// Nearest plane in local coordinates, or `None` for a free field.
/// Errors when the pose has crossed the nearest plane.
fn nearest_local_plane(
    pose: &Pose2,
    planes: &[crate::geometry::PlaneParams],
) -> Result<Option<LocalPlane>, AcousticsError> {
    let nearest = planes
        .iter()
        .map(|p| local_plane_params(pose, p))
        .min_by(|a, b| a.d.total_cmp(&b.d));
    match nearest {
        None => Ok(None),
        Some(lp) if lp.is_behind() => Err(AcousticsError::PoseBeyondWall(lp.d)),
        Some(lp) => Ok(Some(lp)),
    }
}

/// Simulate one sweep frame at `pose`: interference magnitudes off the
/// nearest plane (first-order echo only) plus clamped Gaussian noise.
pub fn simulate_sweep_frame(
    pose: &Pose2,
    planes: &[crate::geometry::PlaneParams],
    mics: &MicGeometry,
    cfg: &AcousticConfig,
    sched: &SweepSchedule,
    rng_seed: u64,
) -> Result<SweepFrame, AcousticsError> {
    cfg.check_dims(mics.len(), sched.n_freqs())?;
    let local = nearest_local_plane(pose, planes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE))
        .expect("noise std is finite and nonnegative");
    let mags = (0..mics.len())
        .map(|m| {
            sched
                .freqs
                .iter()
                .enumerate()
                .map(|(k, &f)| {
                    let clean = model_magnitude(
                        mics.ell(m),
                        mics.bearing(m),
                        local.as_ref(),
                        f,
                        cfg.mic_gains[m][k],
                        cfg.source_spectrum[k],
                        cfg.rho,
                        cfg.c,
                    );
                    if cfg.noise_std > 0.0 {
                        (clean + noise.sample(&mut rng)).max(0.0)
                    } else {
                        clean
                    }
                })
                .collect()
        })
        .collect();
    Ok(SweepFrame {
        timestamp: 0.0,
        pose_estimate: *pose,
        freqs: sched.freqs.clone(),
        mags,
    })
}

/// Time-domain two-path signal for a pure tone: per-mic waveform of
/// `1/(4πℓ)·s(t − ℓ/c) + (1−ρ)/(4πr)·s(t − r/c)` with `s(t) = sin(2πft)`
/// for `t ≥ 0`, sampled at `sample_rate`. Gains are unity (the schedule's
/// per-frequency gains do not apply to an arbitrary tone).
pub fn simulate_time_signal(
    pose: &Pose2,
    plane: &crate::geometry::PlaneParams,
    mics: &MicGeometry,
    cfg: &AcousticConfig,
    tone_freq: f64,
    duration: f64,
    sample_rate: f64,
) -> Vec<Vec<f64>> {
    let local = local_plane_params(pose, plane);
    let n_samples = (duration * sample_rate).round().max(0.0) as usize;
    let s = |t: f64| {
        if t >= 0.0 {
            (2.0 * PI * tone_freq * t).sin()
        } else {
            0.0
        }
    };
    (0..mics.len())
        .map(|m| {
            let ell = mics.ell(m);
            let r = reflected_path_length(ell, mics.bearing(m), &local);
            let a_direct = 1.0 / (4.0 * PI * ell.max(MIN_AMPLITUDE_PATH));
            let a_echo = (1.0 - cfg.rho) / (4.0 * PI * r.max(MIN_AMPLITUDE_PATH));
            (0..n_samples)
                .map(|n| {
                    let t = n as f64 / sample_rate;
                    a_direct * s(t - ell / cfg.c) + a_echo * s(t - r / cfg.c)
                })
                .collect()
        })
        .collect()
}

/// Symmetric 5-term flattop window of length `n`.
pub fn flattop_window(n: usize) -> Vec<f64> {
    let [a0, a1, a2, a3, a4] = FLATTOP_COEFFS;
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / (n - 1) as f64;
            a0 - a1 * t.cos() + a2 * (2.0 * t).cos() - a3 * (3.0 * t).cos() + a4 * (4.0 * t).cos()
        })
        .collect()
}

/// Amplitude of a sinusoid at `target_freq` in the last `buffer_len`
/// samples of `waveform`: flattop-windowed DFT at the target bin, scaled so
/// a unit-amplitude tone at an exact bin reads 1.0.
pub fn extract_bin_magnitude(
    waveform: &[f64],
    sched: &SweepSchedule,
    target_freq: f64,
) -> Result<f64, AcousticsError> {
    let n = sched.buffer_len;
    if waveform.len() < n {
        return Err(AcousticsError::WaveformTooShort {
            got: waveform.len(),
            need: n,
        });
    }
    let bin_width = sched.bin_width();
    let k = target_freq / bin_width;
    if (k - k.round()).abs() > 1e-6 {
        return Err(AcousticsError::NotBinAligned {
            freq: target_freq,
            bin_width,
        });
    }
    let k = k.round();
    if k <= 0.0 || k >= n as f64 / 2.0 {
        return Err(AcousticsError::OutOfBand(
            target_freq,
            sched.sample_rate / 2.0,
        ));
    }
    let window = flattop_window(n);
    let window_sum: f64 = window.iter().sum();
    let tail = &waveform[waveform.len() - n..];
    let (mut re, mut im) = (0.0, 0.0);
    for (i, (&x, &w)) in tail.iter().zip(&window).enumerate() {
        let phase = -2.0 * PI * k * i as f64 / n as f64;
        re += x * w * phase.cos();
        im += x * w * phase.sin();
    }
    Ok(2.0 * (re * re + im * im).sqrt() / window_sum)
}

/// Noise-free interference magnitudes over a grid of wall distances:
/// one `n_distances × n_freqs` matrix per microphone, wall dead ahead
/// (local angle 0) of an origin pose.
pub fn make_interference_matrix(
    distances: &[f64],
    sched: &SweepSchedule,
    mics: &MicGeometry,
    cfg: &AcousticConfig,
) -> Result<Vec<Vec<Vec<f64>>>, AcousticsError> {
    cfg.check_dims(mics.len(), sched.n_freqs())?;
    Ok((0..mics.len())
        .map(|m| {
            distances
                .iter()
                .map(|&d| {
                    let local = LocalPlane::new(d, 0.0);
                    sched
                        .freqs
                        .iter()
                        .enumerate()
                        .map(|(j, &f)| {
                            model_magnitude(
                                mics.ell(m),
                                mics.bearing(m),
                                Some(&local),
                                f,
                                cfg.mic_gains[m][j],
                                cfg.source_spectrum[j],
                                cfg.rho,
                                cfg.c,
                            )
                        })
                        .collect()
                })
                .collect()
        })
        .collect())
}
