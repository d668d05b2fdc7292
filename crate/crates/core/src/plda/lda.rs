use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::linalg::symmetrize;
use crate::{Error, Result};

use super::{check_dims, group_by_speaker};

/// Fisher LDA: the top `out_dim` generalised eigenvectors of
/// `S_b v = lambda S_w v`, scaled so the within-class covariance of the
/// projection is the identity. Returns an `R x out_dim` matrix.
pub fn train_lda(
    vectors: &[DVector<f64>],
    speakers: &[String],
    out_dim: usize,
) -> Result<DMatrix<f64>> {
    let r = check_dims(vectors)?;
    let groups = group_by_speaker(vectors.len(), speakers)?;
    let num_speakers = groups.len();
    if num_speakers < 2 {
        return Err(Error::Precondition("LDA needs at least two speakers".into()));
    }
    if out_dim == 0 || out_dim > r.min(num_speakers - 1) {
        return Err(Error::Precondition(format!(
            "LDA output dim {out_dim} must be in 1..={}",
            r.min(num_speakers - 1)
        )));
    }
    let n = vectors.len() as f64;
    let global = vectors.iter().fold(DVector::zeros(r), |acc, v| acc + v) / n;
    let mut within = DMatrix::zeros(r, r);
    let mut between = DMatrix::zeros(r, r);
    for idx in groups.values() {
        let mean = idx.iter().fold(DVector::zeros(r), |acc, &i| acc + &vectors[i]) / idx.len() as f64;
        for &i in idx {
            let d = &vectors[i] - &mean;
            within.ger(1.0, &d, &d, 1.0);
        }
        let d = &mean - &global;
        between.ger(idx.len() as f64, &d, &d, 1.0);
    }
    within /= n;
    between /= n;
    let within = symmetrize(&within);

    let chol = match within.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = 1e-6 * (within.trace() / r as f64).max(1.0);
            log::warn!("LDA: within-class scatter is singular; adding ridge {ridge:e}");
            (within + DMatrix::identity(r, r) * ridge)
                .cholesky()
                .ok_or_else(|| Error::Numerical("within-class scatter not invertible".into()))?
        }
    };
    let l = chol.l();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(r, r))
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let m = symmetrize(&(&l_inv * between * l_inv.transpose()));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = DMatrix::zeros(r, out_dim);
    for (j, &k) in order.iter().take(out_dim).enumerate() {
        let mut v = l_inv.tr_mul(&eig.eigenvectors.column(k));
        // sign convention: largest-magnitude entry positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        out.set_column(j, &v);
    }
    Ok(out)
}
