//! Multichannel sensor time series.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used when checking that timestamps are evenly spaced.
pub const UNIFORM_SPACING_RTOL: f64 = 1e-6;

/// PMU measurement channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Bus voltage angle (rad).
    VoltageAngle,
    /// Bus voltage magnitude (p.u.).
    VoltageMagnitude,
    /// Bus frequency (Hz).
    Frequency,
    /// Bus frequency deviation from nominal (p.u.).
    FrequencyDeviation,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::VoltageAngle,
        Channel::VoltageMagnitude,
        Channel::Frequency,
        Channel::FrequencyDeviation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::VoltageAngle => "voltage_angle",
            Channel::VoltageMagnitude => "voltage_magnitude",
            Channel::Frequency => "frequency",
            Channel::FrequencyDeviation => "frequency_deviation",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| FrameError::UnknownChannel(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("frame has {rows} rows but {ids} sensor ids")]
    RowMismatch { rows: usize, ids: usize },
    #[error("frame has {cols} columns but {times} timestamps")]
    ColumnMismatch { cols: usize, times: usize },
    #[error("frame needs at least two timestamps")]
    TooShort,
    #[error("timestamps are not strictly increasing at column {0}")]
    NotIncreasing(usize),
    #[error("timestamps are not uniformly spaced at column {column} (expected step {expected}, got {got})")]
    NonUniform {
        column: usize,
        expected: f64,
        got: f64,
    },
    #[error("duplicate sensor id `{0}`")]
    DuplicateSensor(String),
    #[error("unknown sensor id `{0}`")]
    UnknownSensor(String),
}

/// `p` sensors by `m` samples of one measurement channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    sensor_ids: Vec<String>,
    channel: Channel,
    times: Vec<f64>,
    values: DMatrix<f64>,
}

impl TimeSeriesFrame {
    pub fn new(
        sensor_ids: Vec<String>,
        channel: Channel,
        times: Vec<f64>,
        values: DMatrix<f64>,
    ) -> Result<Self, FrameError> {
        if values.nrows() != sensor_ids.len() {
            return Err(FrameError::RowMismatch {
                rows: values.nrows(),
                ids: sensor_ids.len(),
            });
        }
        if values.ncols() != times.len() {
            return Err(FrameError::ColumnMismatch {
                cols: values.ncols(),
                times: times.len(),
            });
        }
        check_uniform(&times)?;
        let mut seen = std::collections::HashSet::new();
        for id in &sensor_ids {
            if !seen.insert(id.as_str()) {
                return Err(FrameError::DuplicateSensor(id.clone()));
            }
        }
        Ok(Self {
            sensor_ids,
            channel,
            times,
            values,
        })
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    /// Spacing between consecutive samples.
    pub fn sample_period(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensor_ids.iter().position(|s| s == id)
    }

    /// Replace the value matrix, keeping ids, channel and timestamps.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self, FrameError> {
        Self::new(
            self.sensor_ids.clone(),
            self.channel,
            self.times.clone(),
            values,
        )
    }

    /// Reorder rows so that row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let values = DMatrix::from_fn(order.len(), self.n_samples(), |i, k| {
            self.values[(order[i], k)]
        });
        Self {
            sensor_ids: order.iter().map(|&i| self.sensor_ids[i].clone()).collect(),
            channel: self.channel,
            times: self.times.clone(),
            values,
        }
    }

    /// Stack frames sharing a time base. Sensor ids become `<channel>:<id>`.
    pub fn stack(frames: &[&TimeSeriesFrame]) -> Result<Self, FrameError> {
        let first = frames.first().ok_or(FrameError::TooShort)?;
        let m = first.n_samples();
        let mut ids = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for f in frames {
            if f.n_samples() != m {
                return Err(FrameError::ColumnMismatch {
                    cols: f.n_samples(),
                    times: m,
                });
            }
            for (i, id) in f.sensor_ids.iter().enumerate() {
                ids.push(format!("{}:{}", f.channel, id));
                rows.push(f.values.row(i).iter().copied().collect());
            }
        }
        let values = DMatrix::from_fn(rows.len(), m, |i, k| rows[i][k]);
        Self::new(ids, first.channel, first.times.clone(), values)
    }
}

fn check_uniform(times: &[f64]) -> Result<(), FrameError> {
    if times.len() < 2 {
        return Err(FrameError::TooShort);
    }
    let span = times[times.len() - 1] - times[0];
    let step = span / (times.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(FrameError::NotIncreasing(1));
    }
    for k in 1..times.len() {
        let got = times[k] - times[k - 1];
        if !(got > 0.0) {
            return Err(FrameError::NotIncreasing(k));
        }
        if (got - step).abs() > UNIFORM_SPACING_RTOL * step {
            return Err(FrameError::NonUniform {
                column: k,
                expected: step,
                got,
            });
        }
    }
    Ok(())
}

/// `k * period` for `k = 0..m`.
pub fn sample_times(m: usize, period: f64) -> Vec<f64> {
    (0..m).map(|k| k as f64 * period).collect()
}
