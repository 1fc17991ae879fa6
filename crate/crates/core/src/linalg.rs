//! Dense symmetric linear algebra used by the Gaussian oracles and the
//! bound computations.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest Toeplitz order handled by the dense routines.
pub const DENSE_CAP: usize = 8192;

const JITTER_ATTEMPTS: usize = 3;

/// Symmetric Toeplitz matrix with first row `acov[0..n]`.
pub fn toeplitz(acov: &[f64], n: usize) -> Result<DMatrix<f64>> {
    if n > DENSE_CAP {
        return Err(Error::Capability(format!(
            "dense Toeplitz order {n} exceeds the cap of {DENSE_CAP}"
        )));
    }
    if acov.len() < n {
        return Err(Error::InvalidArgument(format!(
            "need {n} autocovariances, got {}",
            acov.len()
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| acov[i.abs_diff(j)]))
}

/// Cholesky factor of a symmetric positive-definite matrix. When the plain
/// factorisation fails, `1e-12·trace/n` is added to the diagonal and grown
/// tenfold, up to three times.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    let n = m.nrows().max(1);
    let mut jitter = 1e-12 * m.trace().abs() / n as f64;
    for _ in 0..JITTER_ATTEMPTS {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = shifted.cholesky() {
            return Ok(c.l());
        }
        jitter *= 10.0;
    }
    Err(Error::LinearAlgebra(format!(
        "matrix of order {} is not positive definite",
        m.nrows()
    )))
}

/// `log det` of a symmetric positive-definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky_with_jitter(m)?;
    Ok(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Operator (spectral) norm of the leading `d×d` block of a symmetric 3×3
/// array.
pub fn sym_op_norm(a: &[[f64; 3]; 3], d: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => a[0][0].abs(),
        _ => {
            let m = Matrix3::from_fn(|i, j| if i < d && j < d { a[i][j] } else { 0.0 });
            SymmetricEigen::new(m)
                .eigenvalues
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()))
        }
    }
}
