use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::binio;
use crate::tv::IVector;
use crate::{Error, Result};

/// Global mean subtraction, optional LDA projection, then length
/// normalisation to the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub mean: DVector<f64>,
    /// `R x R_lda` projection applied to centered vectors.
    pub lda: Option<DMatrix<f64>>,
}

impl Preprocessor {
    pub fn fit(ivectors: &[IVector]) -> Result<Self> {
        if ivectors.len() < 2 {
            return Err(Error::Precondition(
                "fitting the preprocessing mean needs at least two i-vectors".into(),
            ));
        }
        let r = ivectors[0].dim();
        let mut mean = DVector::zeros(r);
        for v in ivectors {
            if v.dim() != r {
                return Err(Error::Dimension(format!("{}: dim {} vs {r}", v.utterance_id, v.dim())));
            }
            mean += &v.mean;
        }
        mean /= ivectors.len() as f64;
        Ok(Self { mean, lda: None })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.lda.as_ref().map_or(self.mean.len(), |l| l.ncols())
    }

    pub fn center(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.mean
    }

    pub fn apply(&self, iv: &IVector) -> Result<IVector> {
        if iv.dim() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "{}: dim {} vs preprocessing dim {}",
                iv.utterance_id,
                iv.dim(),
                self.input_dim()
            )));
        }
        let centered = self.center(&iv.mean);
        let projected = match &self.lda {
            Some(l) => l.tr_mul(&centered),
            None => centered,
        };
        let norm = projected.norm();
        let scale = iv.mean.norm() + self.mean.norm();
        if !norm.is_finite() || norm <= 1e-12 * scale || norm == 0.0 {
            return Err(Error::Precondition(format!(
                "{}: zero vector after mean subtraction, cannot length-normalize",
                iv.utterance_id
            )));
        }
        Ok(IVector::new(iv.utterance_id.clone(), projected / norm))
    }

    pub(crate) fn write_block(&self, w: &mut impl Write) -> Result<()> {
        binio::write_u32(w, self.input_dim())?;
        binio::write_vector_f64(w, &self.mean)?;
        match &self.lda {
            Some(l) => {
                binio::write_u8(w, 1)?;
                binio::write_u32(w, l.ncols())?;
                binio::write_matrix_f64(w, l)
            }
            None => binio::write_u8(w, 0),
        }
    }

    pub(crate) fn read_block(r: &mut impl Read) -> Result<Self> {
        let n = binio::read_u32(r)?;
        let mean = binio::read_vector_f64(r, n)?;
        let lda = if binio::read_u8(r)? != 0 {
            let out = binio::read_u32(r)?;
            Some(binio::read_matrix_f64(r, n, out)?)
        } else {
            None
        };
        Ok(Self { mean, lda })
    }
}

/// Fit (when `fit`) or reuse the stored preprocessing and apply it.
pub fn preprocess(
    ivectors: &[IVector],
    fit: bool,
    existing: Option<&Preprocessor>,
) -> Result<(Vec<IVector>, Preprocessor)> {
    let prep = if fit {
        Preprocessor::fit(ivectors)?
    } else {
        existing
            .cloned()
            .ok_or_else(|| Error::Precondition("apply path needs a fitted preprocessor".into()))?
    };
    let out = ivectors.iter().map(|v| prep.apply(v)).collect::<Result<Vec<_>>>()?;
    Ok((out, prep))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn iv(id: &str, v: &[f64]) -> IVector {
        IVector::new(id, DVector::from_column_slice(v))
    }

    #[test]
    fn two_vector_corpus() {
        let a = [1.0, 2.0, -1.0];
        let b = [0.0, -1.0, 3.0];
        let (out, prep) = preprocess(&[iv("a", &a), iv("b", &b)], true, None).unwrap();
        let diff = DVector::from_column_slice(&a) - DVector::from_column_slice(&b);
        let dir = &diff / diff.norm();
        assert!((&out[0].mean - &dir).amax() < 1e-12);
        assert!((&out[1].mean + &dir).amax() < 1e-12);
        assert!((prep.mean[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn vector_at_the_mean_is_an_error() {
        let prep = Preprocessor {
            mean: DVector::from_vec(vec![1.0, 2.0]),
            lda: None,
        };
        let err = prep.apply(&iv("same", &[1.0, 2.0])).unwrap_err();
        assert!(err.to_string().contains("same"));
    }

    #[test]
    fn fit_needs_two_vectors() {
        assert!(preprocess(&[iv("a", &[1.0])], true, None).is_err());
        assert!(preprocess(&[iv("a", &[1.0])], false, None).is_err());
    }

    #[test]
    fn apply_with_zero_mean_is_idempotent_on_unit_vectors() {
        let prep = Preprocessor {
            mean: DVector::zeros(3),
            lda: None,
        };
        let once = prep.apply(&iv("x", &[3.0, -4.0, 12.0])).unwrap();
        let twice = prep.apply(&once).unwrap();
        assert!((twice.mean.norm() - 1.0).abs() < 1e-15);
        assert!((&twice.mean - &once.mean).amax() < 1e-15);
    }

    proptest! {
        #[test]
        fn outputs_have_unit_norm(
            raw in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 2..12)
        ) {
            let ivs: Vec<_> = raw.iter().enumerate().map(|(i, v)| iv(&format!("u{i}"), v)).collect();
            if let Ok((out, _)) = preprocess(&ivs, true, None) {
                for v in out {
                    prop_assert!((v.mean.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
