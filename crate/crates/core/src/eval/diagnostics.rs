use nalgebra::{DMatrix, DVector};

use crate::linalg::symmetrize;
use crate::plda::{check_dims, group_by_speaker};
use crate::{Error, Result};

/// Per-speaker mean squared distance to the speaker centroid, averaged over speakers.
pub fn mean_variance(vectors: &[DVector<f64>], speakers: &[String]) -> Result<f64> {
    check_dims(vectors)?;
    let groups = group_by_speaker(vectors.len(), speakers)?;
    let mut total = 0.0;
    for idx in groups.values() {
        let centroid = centroid(vectors, idx);
        let spread: f64 = idx.iter().map(|&i| (&vectors[i] - &centroid).norm_squared()).sum();
        total += spread / idx.len() as f64;
    }
    Ok(total / groups.len() as f64)
}

/// Mean squared Euclidean distance between paired vectors.
pub fn d_sl(short: &[DVector<f64>], long: &[DVector<f64>]) -> Result<f64> {
    if short.is_empty() {
        return Err(Error::Precondition("D_sl of an empty pair list".into()));
    }
    if short.len() != long.len() {
        return Err(Error::Dimension(format!("{} short vs {} long vectors", short.len(), long.len())));
    }
    let mut sum = 0.0;
    for (i, (s, l)) in short.iter().zip(long).enumerate() {
        if s.len() != l.len() {
            return Err(Error::Dimension(format!("pair {i}: {} vs {} dims", s.len(), l.len())));
        }
        sum += (s - l).norm_squared();
    }
    Ok(sum / short.len() as f64)
}

/// Class separability `Tr((S_b + S_w)^-1 S_b)`.
pub fn j_ratio(vectors: &[DVector<f64>], speakers: &[String]) -> Result<f64> {
    let r = check_dims(vectors)?;
    let groups = group_by_speaker(vectors.len(), speakers)?;
    if groups.len() < 2 {
        return Err(Error::Precondition("J-ratio needs at least two speakers".into()));
    }
    let k = groups.len() as f64;
    let mut within = DMatrix::zeros(r, r);
    let mut means = Vec::with_capacity(groups.len());
    for idx in groups.values() {
        let m = centroid(vectors, idx);
        let mut cov = DMatrix::zeros(r, r);
        for &i in idx {
            let d = &vectors[i] - &m;
            cov.ger(1.0, &d, &d, 1.0);
        }
        within += cov / idx.len() as f64;
        means.push(m);
    }
    within /= k;
    let grand = means.iter().fold(DVector::zeros(r), |a, m| a + m) / k;
    let mut between = DMatrix::zeros(r, r);
    for m in &means {
        let d = m - &grand;
        between.ger(1.0 / k, &d, &d, 1.0);
    }
    let mut total = symmetrize(&(&between + &within));
    let scale = total.trace() / r as f64;
    if scale <= 0.0 {
        return Ok(0.0);
    }
    let well_conditioned = nalgebra::SymmetricEigen::new(total.clone())
        .eigenvalues
        .iter()
        .all(|&e| e > 1e-10 * scale);
    if !well_conditioned {
        for i in 0..r {
            total[(i, i)] += 1e-8 * scale;
        }
    }
    let solved = total
        .cholesky()
        .ok_or_else(|| Error::Numerical("S_b + S_w is not positive definite".into()))?
        .solve(&between);
    Ok(solved.trace())
}

fn centroid(vectors: &[DVector<f64>], idx: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(vectors[idx[0]].len());
    for &i in idx {
        m += &vectors[i];
    }
    m / idx.len() as f64
}
