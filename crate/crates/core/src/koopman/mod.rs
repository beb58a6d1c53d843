//! Empirical Koopman predictors fitted to snapshot data.
//!
//! Three interchangeable backends share one model type:
//!
//! * [`Backend::Dmd`]: exact dynamic mode decomposition on a truncated SVD basis.
//! * [`Backend::Arnoldi`]: companion-matrix (Krylov) formulation. Each snapshot is
//!   written as a fixed linear combination of the `r` snapshots before it; the
//!   companion matrix of that recurrence gives the eigenvalues and a Vandermonde
//!   least-squares fit of all snapshots gives the modes.
//! * [`Backend::HankelDmd`]: DMD on delay-embedded snapshots, with modes read from the
//!   first block row.
//!
//! A model reconstructs `x_k ≈ Re Σ_j φ_j λ_j^k b_j` from its fit anchor `x_0`.

mod arnoldi;
mod dmd;
mod linalg;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Eigenvalues with modulus below this are treated as numerical noise and dropped.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KoopmanError {
    #[error("snapshot matrix contains a non-finite value at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("need at least {need} snapshots, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("invalid option: {0}")]
    Option(String),
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
    #[error("prediction overflowed at step {step}")]
    Overflow { step: usize },
    #[error("history has {rows} rows and {cols} columns; need {need_rows} rows and at least {need_cols} columns")]
    History {
        rows: usize,
        cols: usize,
        need_rows: usize,
        need_cols: usize,
    },
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Dmd,
    Arnoldi,
    #[serde(alias = "hankel")]
    HankelDmd,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Dmd, Backend::Arnoldi, Backend::HankelDmd];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Dmd => "dmd",
            Backend::Arnoldi => "arnoldi",
            Backend::HankelDmd => "hankel",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = KoopmanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dmd" => Ok(Backend::Dmd),
            "arnoldi" => Ok(Backend::Arnoldi),
            "hankel" | "hankel_dmd" => Ok(Backend::HankelDmd),
            other => Err(KoopmanError::UnknownBackend(other.to_string())),
        }
    }
}

/// `p` sensors by `m` time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
    sample_period: f64,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<f64>, sample_period: f64) -> Result<Self, KoopmanError> {
        if data.ncols() < 2 {
            return Err(KoopmanError::TooShort {
                need: 2,
                got: data.ncols(),
            });
        }
        if let Some((idx, _)) = data.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(KoopmanError::NonFinite(
                idx % data.nrows(),
                idx / data.nrows(),
            ));
        }
        Ok(Self {
            data,
            sample_period,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Fraction of squared singular-value energy to retain, in (0, 1].
    pub rank_energy: f64,
    pub max_rank: usize,
    /// Delay-embedding depth for the Hankel backend.
    pub delay: usize,
    /// The data is treated as carrying no dynamics when its largest singular value is
    /// at or below this.
    pub collapse_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rank_energy: 0.999,
            max_rank: 30,
            delay: 10,
            collapse_tol: 0.0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<(), KoopmanError> {
        if !(self.rank_energy > 0.0 && self.rank_energy <= 1.0) {
            return Err(KoopmanError::Option(
                "rank_energy must lie in (0, 1]".into(),
            ));
        }
        if self.max_rank < 1 {
            return Err(KoopmanError::Option("max_rank must be >= 1".into()));
        }
        if self.delay < 1 {
            return Err(KoopmanError::Option("delay must be >= 1".into()));
        }
        if !(self.collapse_tol >= 0.0) {
            return Err(KoopmanError::Option("collapse_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// How per-mode contributions are combined into per-sensor amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeCombination {
    /// `Σ_j |φ_j[i]| |λ_j|^k |b_j|`
    #[default]
    Incoherent,
    /// `|Σ_j φ_j[i] λ_j^k b_j|`
    Coherent,
}

/// Fitted linear predictor in modal form.
#[derive(Debug, Clone)]
pub struct KoopmanModel {
    eigenvalues: Vec<Complex64>,
    modes: DMatrix<Complex64>,
    amplitudes: DVector<Complex64>,
    /// Modes in the fitted (possibly delay-embedded) coordinates.
    lifted_modes: DMatrix<Complex64>,
    rank: usize,
    backend: Backend,
    delay: usize,
    n_sensors: usize,
    sample_period: f64,
}

impl KoopmanModel {
    pub(crate) fn zero(
        backend: Backend,
        n_sensors: usize,
        delay: usize,
        sample_period: f64,
    ) -> Self {
        Self {
            eigenvalues: Vec::new(),
            modes: DMatrix::zeros(n_sensors, 0),
            amplitudes: DVector::zeros(0),
            lifted_modes: DMatrix::zeros(n_sensors * delay, 0),
            rank: 0,
            backend,
            delay,
            n_sensors,
            sample_period,
        }
    }

    /// Assemble a model, dropping eigenvalues below [`EIGENVALUE_FLOOR`].
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        backend: Backend,
        rank: usize,
        delay: usize,
        n_sensors: usize,
        sample_period: f64,
        eigenvalues: Vec<Complex64>,
        lifted_modes: DMatrix<Complex64>,
        amplitudes: Option<DVector<Complex64>>,
        anchor: &DVector<f64>,
    ) -> Result<Self, KoopmanError> {
        let keep: Vec<usize> = (0..eigenvalues.len())
            .filter(|&j| eigenvalues[j].norm() >= EIGENVALUE_FLOOR)
            .collect();
        if keep.is_empty() {
            return Ok(Self::zero(backend, n_sensors, delay, sample_period));
        }
        let eigenvalues: Vec<Complex64> = keep.iter().map(|&j| eigenvalues[j]).collect();
        let mut lifted = lifted_modes.select_columns(&keep);
        let amplitudes = match amplitudes {
            Some(b) => DVector::from_iterator(keep.len(), keep.iter().map(|&j| b[j])),
            None => {
                for mut c in lifted.column_iter_mut() {
                    let n = c.norm();
                    if n > 0.0 {
                        c /= Complex64::new(n, 0.0);
                    }
                }
                let rhs = DMatrix::from_iterator(
                    anchor.len(),
                    1,
                    anchor.iter().map(|&x| Complex64::new(x, 0.0)),
                );
                linalg::lstsq(&lifted, &rhs)?.column(0).into_owned()
            }
        };
        let modes = lifted.rows(0, n_sensors).into_owned();
        Ok(Self {
            eigenvalues,
            modes,
            amplitudes,
            lifted_modes: lifted,
            rank,
            backend,
            delay,
            n_sensors,
            sample_period,
        })
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// `p × r` physical-coordinate modes, one per column.
    pub fn modes(&self) -> &DMatrix<Complex64> {
        &self.modes
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    /// Truncation rank of the SVD basis used by the fit.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// No retained dynamics: every prediction is zero.
    pub fn is_zero_dynamics(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Continuous-time exponents `ln λ / T`.
    pub fn continuous_eigenvalues(&self) -> Vec<Complex64> {
        self.eigenvalues
            .iter()
            .map(|l| l.ln() / self.sample_period)
            .collect()
    }

    fn evolve(
        modes: &DMatrix<Complex64>,
        eigenvalues: &[Complex64],
        amplitudes: &DVector<Complex64>,
        steps: impl Iterator<Item = usize>,
    ) -> Result<DMatrix<Complex64>, KoopmanError> {
        let steps: Vec<usize> = steps.collect();
        let mut out = DMatrix::zeros(modes.nrows(), steps.len());
        for (col, &k) in steps.iter().enumerate() {
            let weights: Vec<Complex64> = eigenvalues
                .iter()
                .zip(amplitudes.iter())
                .map(|(l, b)| l.powu(k as u32) * b)
                .collect();
            for i in 0..modes.nrows() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, w) in weights.iter().enumerate() {
                    acc += modes[(i, j)] * w;
                }
                if !(acc.re.is_finite() && acc.im.is_finite()) {
                    return Err(KoopmanError::Overflow { step: k });
                }
                out[(i, col)] = acc;
            }
        }
        Ok(out)
    }

    /// Complex reconstruction `Σ_j φ_j λ_j^k b_j` for `k = 1..=horizon`.
    pub fn predict_complex(&self, horizon: usize) -> Result<DMatrix<Complex64>, KoopmanError> {
        Self::evolve(
            &self.modes,
            &self.eigenvalues,
            &self.amplitudes,
            1..=horizon,
        )
    }

    /// Real part of the modal reconstruction for steps `1..=horizon` after the fit anchor.
    pub fn predict(&self, horizon: usize) -> Result<DMatrix<f64>, KoopmanError> {
        Ok(self.predict_complex(horizon)?.map(|z| z.re))
    }

    /// Forecast `horizon` steps past the last column of `history` (`p` rows, at least
    /// `delay` columns). Amplitudes are re-solved against the most recent snapshot, or
    /// the most recent delay block for the Hankel backend.
    pub fn forecast(
        &self,
        history: &DMatrix<f64>,
        horizon: usize,
    ) -> Result<DMatrix<f64>, KoopmanError> {
        let p = self.n_sensors;
        let d = self.delay;
        if history.nrows() != p || history.ncols() < d {
            return Err(KoopmanError::History {
                rows: history.nrows(),
                cols: history.ncols(),
                need_rows: p,
                need_cols: d,
            });
        }
        if self.is_zero_dynamics() {
            return Ok(DMatrix::zeros(p, horizon));
        }
        let start = history.ncols() - d;
        let anchor = DMatrix::from_fn(p * d, 1, |r, _| {
            Complex64::new(history[(r % p, start + r / p)], 0.0)
        });
        let b = linalg::lstsq(&self.lifted_modes, &anchor)?
            .column(0)
            .into_owned();
        let last_block = self.lifted_modes.rows((d - 1) * p, p).into_owned();
        Ok(Self::evolve(&last_block, &self.eigenvalues, &b, 1..=horizon)?.map(|z| z.re))
    }

    /// Per-sensor modal amplitude over `k = 1..=horizon`. Every entry is non-negative.
    pub fn mode_amplitude_matrix(&self, horizon: usize) -> DMatrix<f64> {
        self.mode_amplitude_matrix_with(horizon, ModeCombination::Incoherent)
    }

    pub fn mode_amplitude_matrix_with(
        &self,
        horizon: usize,
        combination: ModeCombination,
    ) -> DMatrix<f64> {
        let p = self.n_sensors;
        let mut v = DMatrix::zeros(p, horizon);
        for k in 1..=horizon {
            for i in 0..p {
                v[(i, k - 1)] = match combination {
                    ModeCombination::Incoherent => self
                        .eigenvalues
                        .iter()
                        .enumerate()
                        .map(|(j, l)| {
                            self.modes[(i, j)].norm()
                                * l.norm().powi(k as i32)
                                * self.amplitudes[j].norm()
                        })
                        .sum(),
                    ModeCombination::Coherent => self
                        .eigenvalues
                        .iter()
                        .enumerate()
                        .map(|(j, l)| self.modes[(i, j)] * l.powu(k as u32) * self.amplitudes[j])
                        .sum::<Complex64>()
                        .norm(),
                };
            }
        }
        v
    }

    /// Write `(λ, b, φ)` as CSV, one mode per row.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = out;
        let mut header = vec![
            "mode".to_string(),
            "lambda_re".into(),
            "lambda_im".into(),
            "b_re".into(),
            "b_im".into(),
        ];
        for i in 0..self.n_sensors {
            header.push(format!("phi_re_{i}"));
            header.push(format!("phi_im_{i}"));
        }
        writeln!(w, "{}", header.join(","))?;
        for (j, l) in self.eigenvalues.iter().enumerate() {
            let mut row = vec![
                j.to_string(),
                format!("{:.16e}", l.re),
                format!("{:.16e}", l.im),
                format!("{:.16e}", self.amplitudes[j].re),
                format!("{:.16e}", self.amplitudes[j].im),
            ];
            for i in 0..self.n_sensors {
                row.push(format!("{:.16e}", self.modes[(i, j)].re));
                row.push(format!("{:.16e}", self.modes[(i, j)].im));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Delay-embed `x` (`p × m`) into `(d·p) × (m − d + 1)`; column `k` stacks `x_k … x_{k+d−1}`.
pub fn hankel_embed(x: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let p = x.nrows();
    let cols = x.ncols() + 1 - d;
    DMatrix::from_fn(d * p, cols, |r, k| x[(r % p, k + r / p)])
}

/// Fit a Koopman model to `x` with the chosen backend.
pub fn fit(
    x: &SnapshotMatrix,
    backend: Backend,
    options: &FitOptions,
) -> Result<KoopmanModel, KoopmanError> {
    options.validate()?;
    let data = x.data();
    let p = data.nrows();
    match backend {
        Backend::Dmd => dmd::fit(data, options, Backend::Dmd, 1, p, x.sample_period()),
        Backend::Arnoldi => arnoldi::fit(data, options, x.sample_period()),
        Backend::HankelDmd => {
            let d = options.delay;
            if data.ncols() < d + 2 {
                return Err(KoopmanError::TooShort {
                    need: d + 2,
                    got: data.ncols(),
                });
            }
            let h = hankel_embed(data, d);
            dmd::fit(&h, options, Backend::HankelDmd, d, p, x.sample_period())
        }
    }
}
