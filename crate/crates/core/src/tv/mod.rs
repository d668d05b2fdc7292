//! Baum-Welch statistics and the total variability (i-vector) model.

mod archive;
mod model;

use nalgebra::{DMatrix, DVector};

pub use archive::{read_ivectors, read_stats, write_ivectors, write_stats};
pub use model::{extract_ivector, train_tv_em, IvectorExtractor, TotalVariabilityModel, TvConfig, TvTraining};

use crate::ubm::{FeatureSequence, FullGmm, VadMask};
use crate::{Error, Result};

/// Zeroth- and first-order statistics of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SuffStats {
    pub utterance_id: String,
    /// `N_c`, length `C`.
    pub zeroth: DVector<f64>,
    /// `F_c` as rows, `C x D`.
    pub first: DMatrix<f64>,
    /// Whether the UBM means have been subtracted from `first`.
    pub centered: bool,
}

impl SuffStats {
    pub fn num_components(&self) -> usize {
        self.zeroth.len()
    }

    pub fn dim(&self) -> usize {
        self.first.ncols()
    }

    /// Element-wise sum of two statistics of the same kind.
    pub fn merged(&self, other: &SuffStats, id: impl Into<String>) -> Result<SuffStats> {
        if self.zeroth.len() != other.zeroth.len()
            || self.first.shape() != other.first.shape()
            || self.centered != other.centered
        {
            return Err(Error::Dimension("cannot merge incompatible statistics".into()));
        }
        Ok(SuffStats {
            utterance_id: id.into(),
            zeroth: &self.zeroth + &other.zeroth,
            first: &self.first + &other.first,
            centered: self.centered,
        })
    }
}

/// An i-vector with optional posterior covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct IVector {
    pub utterance_id: String,
    pub mean: DVector<f64>,
    pub posterior_covariance: Option<DMatrix<f64>>,
}

impl IVector {
    pub fn new(utterance_id: impl Into<String>, mean: DVector<f64>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            mean,
            posterior_covariance: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `N_c = sum_t P(c|y_t)` and `F_c = sum_t P(c|y_t) y_t` over speech frames.
pub fn accumulate_stats(
    posteriors: &DMatrix<f64>,
    utterance: &FeatureSequence,
    mask: &VadMask,
) -> Result<SuffStats> {
    if posteriors.nrows() != utterance.num_frames() {
        return Err(Error::Dimension(format!(
            "{}: {} posterior rows for {} frames",
            utterance.utterance_id,
            posteriors.nrows(),
            utterance.num_frames()
        )));
    }
    let keep = mask.check_len(utterance.num_frames(), &utterance.utterance_id)?;
    let (zeroth, first) = if keep.len() == utterance.num_frames() {
        (
            posteriors.row_sum().transpose(),
            posteriors.transpose() * &utterance.frames,
        )
    } else {
        let p = posteriors.select_rows(keep.iter());
        let y = utterance.frames.select_rows(keep.iter());
        (p.row_sum().transpose(), p.transpose() * y)
    };
    Ok(SuffStats {
        utterance_id: utterance.utterance_id.clone(),
        zeroth,
        first,
        centered: false,
    })
}

/// `F_c <- F_c - N_c mu_c` using the UBM means.
pub fn center_stats(stats: &SuffStats, ubm: &FullGmm) -> Result<SuffStats> {
    center_with_means(stats, ubm.means())
}

pub(crate) fn center_with_means(stats: &SuffStats, means: &DMatrix<f64>) -> Result<SuffStats> {
    if stats.centered {
        return Err(Error::Precondition(format!(
            "{}: statistics are already centered",
            stats.utterance_id
        )));
    }
    if means.shape() != stats.first.shape() {
        return Err(Error::Dimension(format!(
            "{}: stats {:?} vs UBM means {:?}",
            stats.utterance_id,
            stats.first.shape(),
            means.shape()
        )));
    }
    let mut first = stats.first.clone();
    for (k, mut row) in first.row_iter_mut().enumerate() {
        row -= means.row(k) * stats.zeroth[k];
    }
    Ok(SuffStats {
        utterance_id: stats.utterance_id.clone(),
        zeroth: stats.zeroth.clone(),
        first,
        centered: true,
    })
}
