//! i-vector backend: preprocessing, LDA, simplified Gaussian PLDA and
//! log-likelihood-ratio scoring, plus the trial-list and score-file formats.

mod lda;
mod model;
mod preprocess;
mod trials;

pub use lda::train_lda;
pub use model::{score_llr, train_plda_em, PldaConfig, PldaModel, PldaTraining};
pub use preprocess::{preprocess, Preprocessor};
pub use trials::{read_scores, read_trials, write_scores, write_trials, ScoreLine, Trial, TrialSet};

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::{Error, Result};

/// Indices of each speaker's vectors, speakers in sorted order.
pub(crate) fn group_by_speaker<'a>(
    n: usize,
    speakers: &'a [String],
) -> Result<BTreeMap<&'a str, Vec<usize>>> {
    if speakers.len() != n {
        return Err(Error::Dimension(format!("{n} vectors but {} labels", speakers.len())));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in speakers.iter().enumerate() {
        groups.entry(s.as_str()).or_default().push(i);
    }
    Ok(groups)
}

pub(crate) fn check_dims(vectors: &[DVector<f64>]) -> Result<usize> {
    let r = vectors
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::Precondition("no vectors".into()))?;
    if vectors.iter().any(|v| v.len() != r) {
        return Err(Error::Dimension("vectors of differing dimension".into()));
    }
    if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("input vectors".into()));
    }
    Ok(r)
}
