//! Dense linear-algebra helpers shared by the model code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

/// One draw from N(0, 1).
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

/// Cholesky factorisation, retrying with a growing diagonal jitter
/// (starting at `1e-10 * mean diagonal`) when the matrix is not numerically
/// positive definite.
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows().max(1);
    let scale = (m.trace().abs() / n as f64).max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    for _ in 0..12 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            log::debug!("cholesky needed jitter {jitter:e}");
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "matrix of order {} is not positive definite",
        m.nrows()
    )))
}

/// log-determinant from a Cholesky factor.
pub fn chol_log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = cholesky_jitter(m)?.inverse();
    Ok(symmetrize(&inv))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Clamp the eigenvalues of a symmetric matrix from below. Returns the
/// matrix unchanged (bitwise) when no eigenvalue is under the floor, along
/// with a flag telling whether the floor was active.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return (m.clone(), false);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    (symmetrize(&rebuilt), true)
}

/// Numerically stable `ln(sum(exp(x)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Orthonormal basis of the column span (via thin SVD).
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-12 * svd.singular_values.max())
        .count();
    u.columns(0, rank).into_owned()
}

/// Principal angles (degrees, ascending) between the column spans of two
/// matrices.
pub fn principal_angles_deg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    let cross = qa.transpose() * qb;
    let sv = cross.svd(false, false).singular_values;
    let mut angles: Vec<f64> = sv
        .iter()
        .map(|&s| s.clamp(-1.0, 1.0).acos().to_degrees())
        .collect();
    angles.sort_by(|x, y| x.total_cmp(y));
    angles
}

pub fn largest_principal_angle_deg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    principal_angles_deg(a, b)
        .last()
        .copied()
        .unwrap_or(0.0)
}

pub fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}
