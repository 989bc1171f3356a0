//! JSONL dataset records: one sweep frame per line, with an optional
//! ground-truth sidecar object for simulated data.

use super::PipelineError;
use crate::acoustics::SweepFrame;
use crate::geometry::Pose2;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Ground truth attached to a simulated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// True pose [x, y, φ].
    pub pose: [f64; 3],
    /// Global wall planes as (distance, normal angle) pairs.
    pub planes: Vec<[f64; 2]>,
}

/// One dataset line: timestamp, odometry pose estimate, sweep frequencies,
/// per-microphone magnitudes, and (for simulated data) ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Timestamp in seconds.
    pub t: f64,
    /// Odometry pose estimate [x, y, φ].
    pub pose: [f64; 3],
    /// Sweep frequencies in Hz.
    pub freqs: Vec<f64>,
    /// `n_mics × n_freqs` magnitudes.
    pub mags: Vec<Vec<f64>>,
    /// Ground truth; omitted when replaying real recordings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt: Option<GroundTruth>,
}

impl FrameRecord {
    /// The record's pose estimate as a pose value.
    pub fn pose_estimate(&self) -> Pose2 {
        Pose2::new(self.pose[0], self.pose[1], self.pose[2])
    }

    /// Converts to the acoustic-stage frame type, restricted to the first
    /// `n_mics` microphones.
    pub fn to_sweep_frame(&self, n_mics: usize) -> SweepFrame {
        SweepFrame {
            timestamp: self.t,
            pose_estimate: self.pose_estimate(),
            freqs: self.freqs.clone(),
            mags: self.mags[..n_mics].to_vec(),
        }
    }

    /// Structural checks against the first record of the stream.
    pub(crate) fn check_schema(
        &self,
        line: usize,
        freqs: &[f64],
        n_mics: usize,
    ) -> Result<(), PipelineError> {
        if self.freqs != freqs {
            return Err(PipelineError::DataLine {
                line,
                msg: "sweep frequencies differ from the first frame".into(),
            });
        }
        if self.mags.len() != n_mics {
            return Err(PipelineError::DataLine {
                line,
                msg: format!(
                    "expected {} microphone channels, got {}",
                    n_mics,
                    self.mags.len()
                ),
            });
        }
        for (m, ch) in self.mags.iter().enumerate() {
            if ch.len() != freqs.len() {
                return Err(PipelineError::DataLine {
                    line,
                    msg: format!(
                        "microphone {m} has {} magnitudes, expected {}",
                        ch.len(),
                        freqs.len()
                    ),
                });
            }
            if ch.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(PipelineError::DataLine {
                    line,
                    msg: format!("microphone {m} has a negative or non-finite magnitude"),
                });
            }
        }
        Ok(())
    }
}

/// Reads a JSONL dataset, validating the schema against the first record.
/// Errors carry 1-based line numbers.
pub fn read_dataset(reader: impl BufRead) -> Result<Vec<FrameRecord>, PipelineError> {
    let mut records: Vec<FrameRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| PipelineError::DataLine {
            line: line_no,
            msg: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let record: FrameRecord =
            serde_json::from_str(&text).map_err(|e| PipelineError::DataLine {
                line: line_no,
                msg: e.to_string(),
            })?;
        if let Some(first) = records.first() {
            record.check_schema(line_no, &first.freqs, first.mags.len())?;
        } else {
            record.check_schema(line_no, &record.freqs.clone(), record.mags.len())?;
            if record.freqs.len() < 2 {
                return Err(PipelineError::DataLine {
                    line: line_no,
                    msg: "a frame needs at least 2 sweep frequencies".into(),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records as JSONL.
pub fn write_dataset(records: &[FrameRecord], mut writer: impl Write) -> Result<(), PipelineError> {
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| PipelineError::Data(format!("serializing frame: {e}")))?;
        writeln!(writer, "{line}").map_err(|e| PipelineError::Data(e.to_string()))?;
    }
    Ok(())
}
