use nalgebra::{DMatrix, DVector};

use crate::ubm::VadMask;
use crate::{Error, Result};

/// Scaled mean frame posterior of an utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeVector {
    pub values: DVector<f64>,
}

/// `scale * mean_t P(c | y_t)` over the speech frames of one utterance.
pub fn build_phoneme_vector(posteriors: &DMatrix<f64>, mask: &VadMask, scale: f64) -> Result<PhonemeVector> {
    let keep = mask.check_len(posteriors.nrows(), "phoneme vector")?;
    if keep.is_empty() {
        return Err(Error::Precondition("phoneme vector needs at least one speech frame".into()));
    }
    let mut sum = DVector::zeros(posteriors.ncols());
    for &t in &keep {
        sum += posteriors.row(t).transpose();
    }
    Ok(PhonemeVector {
        values: sum * (scale / keep.len() as f64),
    })
}
