//! Dense helpers on top of nalgebra: truncated SVD, real-matrix eigenpairs, complex
//! least squares.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::KoopmanError;

pub(crate) struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Rank chosen from singular values: numerically zero values are dropped, then the
/// smallest rank reaching `energy` of the squared spectrum, capped at `max_rank`.
pub(crate) fn choose_rank(s: &[f64], dims: (usize, usize), energy: f64, max_rank: usize) -> usize {
    let Some(&top) = s.first() else {
        return 0;
    };
    let floor = dims.0.max(dims.1) as f64 * f64::EPSILON * top;
    let kept: Vec<f64> = s.iter().copied().filter(|&x| x > floor).collect();
    let total: f64 = kept.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    let mut r = kept.len();
    for (i, x) in kept.iter().enumerate() {
        acc += x * x;
        if acc >= energy * total * (1.0 - 1e-12) {
            r = i + 1;
            break;
        }
    }
    r.min(max_rank)
}

type Svd = (DMatrix<f64>, DVector<f64>, DMatrix<f64>);

pub(crate) fn svd(x: &DMatrix<f64>) -> Result<Svd, KoopmanError> {
    let svd = nalgebra::SVD::try_new(x.clone(), true, true, f64::EPSILON, 0)
        .ok_or(KoopmanError::NoConvergence("svd"))?;
    let u = svd.u.ok_or(KoopmanError::NoConvergence("svd"))?;
    let vt = svd.v_t.ok_or(KoopmanError::NoConvergence("svd"))?;
    Ok((u, svd.singular_values, vt.transpose()))
}

pub(crate) fn truncate(
    u: &DMatrix<f64>,
    s: &DVector<f64>,
    v: &DMatrix<f64>,
    r: usize,
) -> TruncatedSvd {
    TruncatedSvd {
        u: u.columns(0, r).into_owned(),
        s: s.rows(0, r).into_owned(),
        v: v.columns(0, r).into_owned(),
    }
}

pub(crate) fn to_complex(a: &DMatrix<f64>) -> DMatrix<Complex64> {
    a.map(|x| Complex64::new(x, 0.0))
}

/// Eigenvalues of a real square matrix. Conjugate pairs come out adjacent, positive
/// imaginary part first; real eigenvalues carry an exact zero imaginary part.
pub(crate) fn real_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, KoopmanError> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or(KoopmanError::NoConvergence("schur"))?;
    let raw = schur.complex_eigenvalues();
    let mut out = Vec::with_capacity(raw.len());
    for z in raw.iter() {
        if z.im > 0.0 {
            out.push(*z);
            out.push(z.conj());
        } else if z.im == 0.0 {
            out.push(Complex64::new(z.re, 0.0));
        }
    }
    if out.len() != a.nrows() || out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(KoopmanError::NoConvergence("schur"));
    }
    Ok(out)
}

/// Eigenpairs of a real square matrix via Schur eigenvalues and inverse iteration.
/// Eigenvectors have unit norm; partners of a conjugate pair are exact conjugates.
pub(crate) fn real_eig(
    a: &DMatrix<f64>,
) -> Result<(Vec<Complex64>, DMatrix<Complex64>), KoopmanError> {
    let n = a.nrows();
    let values = real_eigenvalues(a)?;
    let ac = to_complex(a);
    let scale = a.amax().max(1.0);
    let mut vectors = DMatrix::zeros(n, n);
    let mut j = 0;
    while j < n {
        let lambda = values[j];
        let v = inverse_iteration(&ac, lambda, scale)?;
        if lambda.im > 0.0 {
            vectors.set_column(j, &v);
            vectors.set_column(j + 1, &v.map(|z| z.conj()));
            j += 2;
        } else {
            vectors.set_column(j, &v.map(|z| Complex64::new(z.re, 0.0)).normalize());
            j += 1;
        }
    }
    Ok((values, vectors))
}

fn inverse_iteration(
    a: &DMatrix<Complex64>,
    lambda: Complex64,
    scale: f64,
) -> Result<DVector<Complex64>, KoopmanError> {
    let n = a.nrows();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.0)).normalize();
    for attempt in 0..4 {
        let shift = lambda + Complex64::new(scale * 1e-10 * 10f64.powi(attempt), 0.0);
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] -= shift;
        }
        let lu = b.lu();
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&v) {
                Some(w) if w.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                    let norm = w.norm();
                    if norm == 0.0 {
                        ok = false;
                        break;
                    }
                    v = w / Complex64::new(norm, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            // fix the phase so the largest entry is real and positive
            let (imax, _) = v.iter().enumerate().fold((0, 0.0), |acc, (i, z)| {
                if z.norm() > acc.1 {
                    (i, z.norm())
                } else {
                    acc
                }
            });
            let phase = v[imax] / Complex64::new(v[imax].norm(), 0.0);
            return Ok(v.map(|z| z / phase));
        }
    }
    Err(KoopmanError::NoConvergence("inverse iteration"))
}

/// Minimum-norm least-squares solution of `a x = b`.
pub(crate) fn lstsq(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>, KoopmanError> {
    if a.ncols() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let svd = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, 0)
        .ok_or(KoopmanError::NoConvergence("svd"))?;
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * top;
    svd.solve(b, eps)
        .map_err(|_| KoopmanError::NoConvergence("least squares"))
}

/// Minimum-norm least-squares solution of a real system `a x = b`.
pub(crate) fn lstsq_real(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, KoopmanError> {
    let svd = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, 0)
        .ok_or(KoopmanError::NoConvergence("svd"))?;
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * top;
    svd.solve(b, eps)
        .map_err(|_| KoopmanError::NoConvergence("least squares"))
}
