use nalgebra::DMatrix;

use super::linalg::{choose_rank, real_eig, svd, to_complex, truncate};
use super::{Backend, FitOptions, KoopmanError, KoopmanModel};

/// Exact DMD of the columns of `x`.
///
/// `x` may be delay-embedded; `n_sensors` rows of the first block are the physical
/// coordinates.
pub(super) fn fit(
    x: &DMatrix<f64>,
    options: &FitOptions,
    backend: Backend,
    delay: usize,
    n_sensors: usize,
    sample_period: f64,
) -> Result<KoopmanModel, KoopmanError> {
    let (n, m) = x.shape();
    let past = x.columns(0, m - 1).into_owned();
    let future = x.columns(1, m - 1).into_owned();
    let (u, s, v) = svd(&past)?;
    if s.iter().copied().fold(0.0, f64::max) <= options.collapse_tol {
        return Ok(KoopmanModel::zero(backend, n_sensors, delay, sample_period));
    }
    let r = choose_rank(
        s.as_slice(),
        (n, m - 1),
        options.rank_energy,
        options.max_rank,
    );
    if r == 0 {
        return Ok(KoopmanModel::zero(backend, n_sensors, delay, sample_period));
    }
    let t = truncate(&u, &s, &v, r);
    let s_inv = DMatrix::from_diagonal(&t.s.map(|x| 1.0 / x));
    // X' V Σ⁻¹, shared by the reduced operator and the exact modes
    let projected = &future * &t.v * s_inv;
    let reduced = t.u.transpose() * &projected;
    let (eigenvalues, w) = real_eig(&reduced)?;
    let modes = to_complex(&projected) * w;
    let anchor = x.column(0).into_owned();
    KoopmanModel::assemble(
        backend,
        r,
        delay,
        n_sensors,
        sample_period,
        eigenvalues,
        modes,
        None,
        &anchor,
    )
}
