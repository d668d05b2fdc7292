//! `STA1` statistics archives, `IVX1` i-vector archives and the `TVM1`
//! model file.
//!
//! ```text
//! STA1: magic | count u32 | C u32 | D u32 | records
//!       record: id_len u32 | id | centered u8 | N: C f64 | F: C*D f64
//! IVX1: magic | count u32 | R u32 | has_cov u8 | records
//!       record: id_len u32 | id | mean: R f64 | [cov: R*R f64]
//! TVM1: magic | C u32 | D u32 | R u32 | T: C*D*R f64 | means: C*D f64 | covs: C*D*D f64
//! ```

use std::path::Path;

use crate::binio;
use crate::{Error, Result};

use super::{IVector, SuffStats, TotalVariabilityModel};

pub fn write_stats(path: &Path, stats: &[SuffStats]) -> Result<()> {
    let (c, d) = stats
        .first()
        .map(|s| (s.num_components(), s.dim()))
        .unwrap_or((0, 0));
    let mut w = binio::create(path)?;
    binio::write_magic(&mut w, b"STA1")?;
    binio::write_u32(&mut w, stats.len())?;
    binio::write_u32(&mut w, c)?;
    binio::write_u32(&mut w, d)?;
    for s in stats {
        if s.num_components() != c || s.dim() != d {
            return Err(Error::Dimension(format!("{}: inconsistent stats shape", s.utterance_id)));
        }
        binio::write_id(&mut w, &s.utterance_id)?;
        binio::write_u8(&mut w, s.centered as u8)?;
        binio::write_vector_f64(&mut w, &s.zeroth)?;
        binio::write_matrix_f64(&mut w, &s.first)?;
    }
    binio::flush(w, path)
}

pub fn read_stats(path: &Path) -> Result<Vec<SuffStats>> {
    let mut r = binio::open(path)?;
    binio::expect_magic(&mut r, b"STA1")?;
    let n = binio::read_u32(&mut r)?;
    let c = binio::read_u32(&mut r)?;
    let d = binio::read_u32(&mut r)?;
    (0..n)
        .map(|_| {
            Ok(SuffStats {
                utterance_id: binio::read_id(&mut r)?,
                centered: binio::read_u8(&mut r)? != 0,
                zeroth: binio::read_vector_f64(&mut r, c)?,
                first: binio::read_matrix_f64(&mut r, c, d)?,
            })
        })
        .collect()
}

pub fn write_ivectors(path: &Path, ivectors: &[IVector]) -> Result<()> {
    let r = ivectors.first().map(|v| v.dim()).unwrap_or(0);
    let has_cov = !ivectors.is_empty() && ivectors.iter().all(|v| v.posterior_covariance.is_some());
    let mut w = binio::create(path)?;
    binio::write_magic(&mut w, b"IVX1")?;
    binio::write_u32(&mut w, ivectors.len())?;
    binio::write_u32(&mut w, r)?;
    binio::write_u8(&mut w, has_cov as u8)?;
    for v in ivectors {
        if v.dim() != r {
            return Err(Error::Dimension(format!("{}: i-vector dim {} vs {r}", v.utterance_id, v.dim())));
        }
        binio::write_id(&mut w, &v.utterance_id)?;
        binio::write_vector_f64(&mut w, &v.mean)?;
        if has_cov {
            binio::write_matrix_f64(&mut w, v.posterior_covariance.as_ref().expect("checked"))?;
        }
    }
    binio::flush(w, path)
}

pub fn read_ivectors(path: &Path) -> Result<Vec<IVector>> {
    let mut rd = binio::open(path)?;
    binio::expect_magic(&mut rd, b"IVX1")?;
    let n = binio::read_u32(&mut rd)?;
    let r = binio::read_u32(&mut rd)?;
    let has_cov = binio::read_u8(&mut rd)? != 0;
    (0..n)
        .map(|_| {
            let utterance_id = binio::read_id(&mut rd)?;
            let mean = binio::read_vector_f64(&mut rd, r)?;
            let posterior_covariance = if has_cov {
                Some(binio::read_matrix_f64(&mut rd, r, r)?)
            } else {
                None
            };
            Ok(IVector {
                utterance_id,
                mean,
                posterior_covariance,
            })
        })
        .collect()
}

impl TotalVariabilityModel {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        binio::write_magic(&mut w, b"TVM1")?;
        binio::write_u32(&mut w, self.num_components())?;
        binio::write_u32(&mut w, self.feature_dim())?;
        binio::write_u32(&mut w, self.rank())?;
        binio::write_matrix_f64(&mut w, &self.t)?;
        binio::write_matrix_f64(&mut w, &self.ubm_means)?;
        for cov in &self.ubm_covariances {
            binio::write_matrix_f64(&mut w, cov)?;
        }
        binio::flush(w, path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        binio::expect_magic(&mut r, b"TVM1")?;
        let c = binio::read_u32(&mut r)?;
        let d = binio::read_u32(&mut r)?;
        let rank = binio::read_u32(&mut r)?;
        let t = binio::read_matrix_f64(&mut r, c * d, rank)?;
        let means = binio::read_matrix_f64(&mut r, c, d)?;
        let covs = (0..c)
            .map(|_| binio::read_matrix_f64(&mut r, d, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(t, means, covs)
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;

    #[test]
    fn archives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stats = vec![SuffStats {
            utterance_id: "a-seg000".into(),
            zeroth: DVector::from_vec(vec![1.5, 2.5]),
            first: DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 / 3.0),
            centered: true,
        }];
        let p = dir.path().join("s.sta");
        write_stats(&p, &stats).unwrap();
        assert_eq!(read_stats(&p).unwrap(), stats);

        let ivs = vec![
            IVector {
                utterance_id: "x".into(),
                mean: DVector::from_vec(vec![0.1, -0.2]),
                posterior_covariance: Some(DMatrix::identity(2, 2)),
            },
            IVector {
                utterance_id: "y".into(),
                mean: DVector::from_vec(vec![1.0 / 3.0, 7.0]),
                posterior_covariance: Some(DMatrix::identity(2, 2) * 0.5),
            },
        ];
        let p = dir.path().join("i.ivx");
        write_ivectors(&p, &ivs).unwrap();
        assert_eq!(read_ivectors(&p).unwrap(), ivs);

        let model = TotalVariabilityModel::new(
            DMatrix::from_fn(6, 2, |i, j| (i as f64 - j as f64) / 7.0),
            DMatrix::from_fn(2, 3, |i, j| (i + j) as f64),
            vec![DMatrix::identity(3, 3); 2],
        )
        .unwrap();
        let p = dir.path().join("m.tvm");
        model.write(&p).unwrap();
        assert_eq!(TotalVariabilityModel::read(&p).unwrap(), model);
    }
}
