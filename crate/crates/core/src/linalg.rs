//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{CgnsError, Result};
use crate::scalar::Scalar;

/// Condition estimate above which a warning is logged for covariance solves.
pub const COND_WARN: f64 = 1e12;

/// Tolerance on the smallest eigenvalue of a covariance after symmetrization.
pub const PSD_TOL: f64 = 1e-10;

pub fn half<T: Scalar>() -> T {
    T::from_real(0.5)
}

/// (m + m†)/2
pub fn hermitian_part<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.adjoint()) * half::<T>()
}

pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    for i in 0..n {
        let d = m[(i, i)];
        m[(i, i)] = T::from_real(d.real());
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conjugate()) * half::<T>();
            m[(i, j)] = avg;
            m[(j, i)] = avg.conjugate();
        }
    }
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(hermitian_part(m)).eigenvalues.min()
}

pub fn is_finite_mat<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.iter().all(|z| z.real().is_finite() && z.imaginary().is_finite())
}

pub fn is_finite_vec<T: Scalar>(v: &DVector<T>) -> bool {
    v.iter().all(|z| z.real().is_finite() && z.imaginary().is_finite())
}

/// Cholesky factor of a Hermitian positive-definite matrix, or a
/// conditioning error naming `what`.
pub fn factor_hpd<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    let chol = m.clone().cholesky().ok_or_else(|| CgnsError::Conditioning {
        step: 0,
        what: format!("{what} is not positive definite"),
    })?;
    let cond = cond_estimate(&chol);
    if !cond.is_finite() {
        return Err(CgnsError::Conditioning { step: 0, what: format!("{what} is singular") });
    }
    if cond > COND_WARN {
        log::warn!("{what} has condition estimate {cond:.3e}");
    }
    Ok(chol)
}

/// Cheap lower bound on the 2-norm condition number from the Cholesky
/// diagonal: (max L_ii / min L_ii)^2.
pub fn cond_estimate<T: Scalar>(chol: &Cholesky<T, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let n = l.nrows();
    if n == 0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = l[(i, i)].real().abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (hi / lo).powi(2)
}

/// log det of the factored matrix.
pub fn log_det<T: Scalar>(chol: &Cholesky<T, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].real().ln()).sum::<f64>() * 2.0
}

/// X·A⁻¹ for Hermitian A given its Cholesky factor, as (A⁻¹·X†)†.
pub fn solve_right<T: Scalar>(chol: &Cholesky<T, Dyn>, x: &DMatrix<T>) -> DMatrix<T> {
    chol.solve(&x.adjoint()).adjoint()
}

/// ‖a − b‖_F / max(‖b‖_F, floor)
pub fn rel_frobenius<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_norm_vec<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Real part of the trace.
pub fn trace_re<T: Scalar>(m: &DMatrix<T>) -> f64 {
    m.diagonal().iter().map(|z| z.real()).sum()
}

/// Checks a freshly symmetrized covariance for finiteness and positivity.
pub fn check_covariance<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if !is_finite_mat(m) {
        return Err(CgnsError::Divergence { step: 0, what: format!("{what} is not finite") });
    }
    // Cholesky on a slightly shifted matrix is a cheap sufficient test;
    // fall back to the eigenvalues only when it fails.
    let n = m.nrows();
    let shifted = m + DMatrix::<T>::identity(n, n) * T::from_real(PSD_TOL);
    if shifted.cholesky().is_some() {
        return Ok(());
    }
    let lam = min_eigenvalue(m);
    if lam < -PSD_TOL {
        return Err(CgnsError::Divergence {
            step: 0,
            what: format!("{what} has eigenvalue {lam:.3e}"),
        });
    }
    Ok(())
}
