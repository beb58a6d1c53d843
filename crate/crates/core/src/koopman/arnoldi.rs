use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::linalg::{choose_rank, lstsq, lstsq_real, real_eigenvalues, svd};
use super::{Backend, FitOptions, KoopmanError, KoopmanModel, EIGENVALUE_FLOOR};

/// Companion-matrix fit.
///
/// With `r` the truncation rank, solve for `c` in `x_{k+r} ≈ Σ_{j<r} c_j x_{k+j}` over
/// every window of the data, take the eigenvalues of the companion matrix of `c`, then
/// fit all snapshots as `X ≈ Φ̃ T` with `T_{jk} = λ_j^k`.
pub(super) fn fit(
    x: &DMatrix<f64>,
    options: &FitOptions,
    sample_period: f64,
) -> Result<KoopmanModel, KoopmanError> {
    let (p, m) = x.shape();
    let past = x.columns(0, m - 1).into_owned();
    let (_, s, _) = svd(&past)?;
    if s.iter().copied().fold(0.0, f64::max) <= options.collapse_tol {
        return Ok(KoopmanModel::zero(Backend::Arnoldi, p, 1, sample_period));
    }
    let r = choose_rank(
        s.as_slice(),
        (p, m - 1),
        options.rank_energy,
        options.max_rank,
    );
    if r == 0 {
        return Ok(KoopmanModel::zero(Backend::Arnoldi, p, 1, sample_period));
    }

    let windows = m - r;
    let mut a = DMatrix::zeros(windows * p, r);
    let mut rhs = DVector::zeros(windows * p);
    for k in 0..windows {
        for i in 0..p {
            let row = k * p + i;
            for j in 0..r {
                a[(row, j)] = x[(i, k + j)];
            }
            rhs[row] = x[(i, k + r)];
        }
    }
    let c = lstsq_real(&a, &rhs)?;
    let mut companion = DMatrix::zeros(r, r);
    for j in 0..r {
        if j + 1 < r {
            companion[(j + 1, j)] = 1.0;
        }
        companion[(j, r - 1)] = c[j];
    }
    let eigenvalues: Vec<Complex64> = real_eigenvalues(&companion)?
        .into_iter()
        .filter(|l| l.norm() >= EIGENVALUE_FLOOR)
        .collect();
    if eigenvalues.is_empty() {
        return Ok(KoopmanModel::zero(Backend::Arnoldi, p, 1, sample_period));
    }

    // rows scaled to unit peak so fast-growing or fast-decaying modes stay well conditioned
    let n_modes = eigenvalues.len();
    let peak: Vec<f64> = eigenvalues
        .iter()
        .map(|l| l.norm().powi(m as i32 - 1).max(1.0))
        .collect();
    let vandermonde_t =
        DMatrix::from_fn(m, n_modes, |k, j| eigenvalues[j].powu(k as u32) / peak[j]);
    let xt = x.transpose().map(|v| Complex64::new(v, 0.0));
    let scaled = lstsq(&vandermonde_t, &xt)?.transpose();
    let mut modes = DMatrix::zeros(p, n_modes);
    let mut amplitudes = DVector::zeros(n_modes);
    for j in 0..n_modes {
        let col = scaled.column(j) / Complex64::new(peak[j], 0.0);
        let norm = col.norm();
        amplitudes[j] = Complex64::new(norm, 0.0);
        if norm > 0.0 {
            modes.set_column(j, &(col / Complex64::new(norm, 0.0)));
        }
    }
    let anchor = x.column(0).into_owned();
    KoopmanModel::assemble(
        Backend::Arnoldi,
        r,
        1,
        p,
        sample_period,
        eigenvalues,
        modes,
        Some(amplitudes),
        &anchor,
    )
}
