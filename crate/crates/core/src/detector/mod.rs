//! Koopman-mode Δ-scores over a moving window.
//!
//! For each window: fit a predictor on the learning span, forecast the prediction span,
//! take the error sequence, fit a second Koopman model to that error, turn its modes
//! into per-sensor pmfs over time, and score every sensor by its divergence from the
//! spatial centroid pmf: `Δ_i = exp(−τ d(i, *))`.

mod stream;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Channel, FrameError};
use crate::koopman::{Backend, FitOptions, KoopmanError, ModeCombination};

pub use stream::{run_frame, run_stacked, run_stream};

/// Tolerance on `Σ = 1` when checking pmf inputs.
pub const PMF_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("amplitude matrix has a negative or non-finite entry at ({0}, {1})")]
    BadAmplitude(usize, usize),
    #[error("input is not a pmf: {0}")]
    NotPmf(String),
    #[error("invalid window config: {0}")]
    Config(String),
    #[error("frame has {have} samples but learning_len + prediction_len needs {need}")]
    TooShort { have: usize, need: usize },
    #[error("channel {0} not present")]
    MissingChannel(Channel),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error("unknown divergence `{0}`")]
    UnknownDivergence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Kl,
    Js,
}

impl DivergenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::Js => "js",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DivergenceKind {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kl" => Ok(DivergenceKind::Kl),
            "js" => Ok(DivergenceKind::Js),
            other => Err(DetectorError::UnknownDivergence(other.to_string())),
        }
    }
}

/// Moving-window parameters. Lengths are in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub learning_len: usize,
    pub prediction_len: usize,
    pub stride: usize,
    pub backend: Backend,
    pub divergence: DivergenceKind,
    pub tau: f64,
    pub epsilon: f64,
    /// Singular-value energy retained by both Koopman fits.
    pub rank_energy: f64,
    pub max_rank: usize,
    /// Delay-embedding depth for the Hankel backend.
    pub delay: usize,
    pub combination: ModeCombination,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            learning_len: 240,
            prediction_len: 40,
            stride: 5,
            backend: Backend::Dmd,
            divergence: DivergenceKind::Kl,
            tau: 5.0,
            epsilon: 1e-12,
            rank_energy: 0.999,
            max_rank: 30,
            delay: 10,
            combination: ModeCombination::Incoherent,
        }
    }
}

impl WindowConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            rank_energy: self.rank_energy,
            max_rank: self.max_rank,
            delay: self.delay,
            collapse_tol: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::Config(m.to_string()));
        if self.learning_len < 2 {
            return bad("learning_len must be >= 2");
        }
        if self.prediction_len < 2 {
            return bad("prediction_len must be >= 2");
        }
        if self.stride < 1 {
            return bad("stride must be >= 1");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be > 0");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if self.backend == Backend::HankelDmd {
            if self.learning_len < self.delay + 2 {
                return bad("learning_len must be >= delay + 2 for the hankel backend");
            }
            if self.prediction_len < self.delay + 2 {
                return bad("prediction_len must be >= delay + 2 for the hankel backend");
            }
        }
        self.fit_options().validate()?;
        Ok(())
    }

    /// Samples needed for one window.
    pub fn span(&self) -> usize {
        self.learning_len + self.prediction_len
    }

    /// Number of windows that fit in `m` samples.
    pub fn window_count(&self, m: usize) -> usize {
        if m < self.span() {
            0
        } else {
            (m - self.span()) / self.stride + 1
        }
    }
}

/// Two-step normalized Koopman-mode rows and their centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedKM {
    /// `p × w`, each row a pmf over the prediction window.
    pub rows: DMatrix<f64>,
    pub centroid: DVector<f64>,
}

/// Per-window, per-sensor scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaScoreSeries {
    pub sensor_ids: Vec<String>,
    /// Start of each window's prediction span, in seconds.
    pub window_times: Vec<f64>,
    /// `windows × p`; NaN rows mark windows whose fit failed.
    pub scores: DMatrix<f64>,
    pub distances: DMatrix<f64>,
}

/// One row of the per-window summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window_time: f64,
    pub argmin_sensor: Option<String>,
    pub min_score: Option<f64>,
    /// Gap between the lowest and second-lowest score.
    pub margin: Option<f64>,
}

impl DeltaScoreSeries {
    pub fn n_windows(&self) -> usize {
        self.window_times.len()
    }

    pub fn is_flagged(&self, w: usize) -> bool {
        self.scores.row(w).iter().any(|s| s.is_nan())
    }

    /// Row index of the lowest score in window `w`; ties go to the lower index.
    pub fn argmin(&self, w: usize) -> Option<usize> {
        if self.is_flagged(w) {
            return None;
        }
        let row = self.scores.row(w);
        let mut best = 0;
        for i in 1..row.len() {
            if row[i] < row[best] {
                best = i;
            }
        }
        Some(best)
    }

    /// Lowest score among sensors for which `include` is true.
    pub fn min_over(&self, w: usize, include: impl Fn(usize) -> bool) -> Option<f64> {
        let row = self.scores.row(w);
        (0..row.len())
            .filter(|&i| include(i))
            .map(|i| row[i])
            .fold(None, |acc: Option<f64>, s| {
                Some(acc.map_or(s, |a| a.min(s)))
            })
    }

    pub fn summary(&self) -> Vec<WindowSummary> {
        (0..self.n_windows())
            .map(|w| {
                let arg = self.argmin(w);
                let min = arg.map(|i| self.scores[(w, i)]);
                let margin = arg.and_then(|i| {
                    self.min_over(w, |j| j != i)
                        .map(|second| second - self.scores[(w, i)])
                });
                WindowSummary {
                    window_time: self.window_times[w],
                    argmin_sensor: arg.map(|i| self.sensor_ids[i].clone()),
                    min_score: min,
                    margin,
                }
            })
            .collect()
    }

    /// Indices of windows whose start time lies in `[from, to]`.
    pub fn windows_between(&self, from: f64, to: f64) -> Vec<usize> {
        const EDGE: f64 = 1e-9;
        (0..self.n_windows())
            .filter(|&w| self.window_times[w] >= from - EDGE && self.window_times[w] <= to + EDGE)
            .collect()
    }
}

/// `observed − predicted`.
pub fn error_sequence(
    observed: &DMatrix<f64>,
    predicted: &DMatrix<f64>,
) -> Result<DMatrix<f64>, DetectorError> {
    if observed.shape() != predicted.shape() {
        return Err(DetectorError::Shape(observed.shape(), predicted.shape()));
    }
    Ok(observed - predicted)
}

/// Normalize columns (time points) to unit sum, then rows (sensors) to unit sum.
/// A zero column becomes uniform `1/p`; a zero row becomes uniform `1/w`.
pub fn normalize_two_step(v: &DMatrix<f64>) -> Result<NormalizedKM, DetectorError> {
    let (p, w) = v.shape();
    if let Some((idx, _)) = v
        .iter()
        .enumerate()
        .find(|(_, x)| !(**x >= 0.0 && x.is_finite()))
    {
        return Err(DetectorError::BadAmplitude(idx % p, idx / p));
    }
    let mut rows = v.clone();
    for mut col in rows.column_iter_mut() {
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        } else {
            col.fill(1.0 / p as f64);
        }
    }
    for mut row in rows.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / w as f64);
        }
    }
    let centroid = DVector::from_fn(w, |k, _| rows.column(k).sum() / p as f64);
    Ok(NormalizedKM { rows, centroid })
}

fn check_pmf(x: &[f64], name: &str) -> Result<(), DetectorError> {
    if x.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(DetectorError::NotPmf(format!(
            "{name} has a negative or non-finite entry"
        )));
    }
    let s: f64 = x.iter().sum();
    if (s - 1.0).abs() > PMF_TOL {
        return Err(DetectorError::NotPmf(format!("{name} sums to {s}")));
    }
    Ok(())
}

fn kl_raw(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| x * (x / y).ln())
        .sum()
}

/// Divergence between pmfs (natural log).
///
/// KL smooths the second argument as `(b + ε) / (1 + wε)`; JS needs no smoothing.
pub fn divergence(
    a: &[f64],
    b: &[f64],
    kind: DivergenceKind,
    epsilon: f64,
) -> Result<f64, DetectorError> {
    if a.len() != b.len() {
        return Err(DetectorError::Shape((a.len(), 1), (b.len(), 1)));
    }
    check_pmf(a, "first argument")?;
    check_pmf(b, "second argument")?;
    let d = match kind {
        DivergenceKind::Kl => {
            let w = b.len() as f64;
            let smoothed: Vec<f64> = b
                .iter()
                .map(|y| (y + epsilon) / (1.0 + w * epsilon))
                .collect();
            kl_raw(a, &smoothed)
        }
        DivergenceKind::Js => {
            let m: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
            0.5 * kl_raw(a, &m) + 0.5 * kl_raw(b, &m)
        }
    };
    // rounding can leave a tiny negative value for identical inputs
    Ok(d.max(0.0))
}

/// Distances `d(i, *)` of every row to the centroid and `Δ_i = exp(−τ d)`.
pub fn delta_scores(
    nkm: &NormalizedKM,
    kind: DivergenceKind,
    tau: f64,
    epsilon: f64,
) -> Result<(DVector<f64>, DVector<f64>), DetectorError> {
    let p = nkm.rows.nrows();
    let centroid: Vec<f64> = nkm.centroid.iter().copied().collect();
    let mut d = DVector::zeros(p);
    for i in 0..p {
        let row: Vec<f64> = nkm.rows.row(i).iter().copied().collect();
        d[i] = divergence(&row, &centroid, kind, epsilon)?;
    }
    let scores = d.map(|x| (-tau * x).exp());
    Ok((d, scores))
}
