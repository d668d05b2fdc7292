//! Universal background model: GMM training, frame posteriors, energy VAD
//! and the feature/posterior archive formats.

mod archive;
mod gmm;
mod vad;

use nalgebra::{DMatrix, DVector};

pub use archive::{read_feature_archive, write_feature_archive, write_posterior_archive, load_posterior_archive};
pub use gmm::{gmm_from_posteriors, gmm_posteriors, train_gmm_em, FullGmm, GmmConfig, GmmScorer, GmmTraining};
pub use vad::{energy_vad, VadMask};

use crate::{Error, Result};

/// One utterance worth of feature frames (`T x D`, one frame per row).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub utterance_id: String,
    pub frames: DMatrix<f64>,
    pub energies: Option<DVector<f64>>,
}

impl FeatureSequence {
    pub fn new(
        utterance_id: impl Into<String>,
        frames: DMatrix<f64>,
        energies: Option<DVector<f64>>,
    ) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if let Some(e) = &energies {
            if e.len() != frames.nrows() {
                return Err(Error::Dimension(format!(
                    "{utterance_id}: {} energies for {} frames",
                    e.len(),
                    frames.nrows()
                )));
            }
        }
        let seq = Self {
            utterance_id,
            frames,
            energies,
        };
        seq.check_finite()?;
        Ok(seq)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn check_finite(&self) -> Result<()> {
        let frames_ok = self.frames.iter().all(|x| x.is_finite());
        let energy_ok = self
            .energies
            .as_ref()
            .is_none_or(|e| e.iter().all(|x| x.is_finite()));
        if frames_ok && energy_ok {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("features of {}", self.utterance_id)))
        }
    }

    /// Contiguous sub-sequence `[start, start + len)` under a new id.
    pub fn slice(&self, id: impl Into<String>, start: usize, len: usize) -> Self {
        Self {
            utterance_id: id.into(),
            frames: self.frames.rows(start, len).into_owned(),
            energies: self.energies.as_ref().map(|e| e.rows(start, len).into_owned()),
        }
    }

    /// Keep only the frames flagged as speech.
    pub fn select(&self, mask: &VadMask) -> Result<Self> {
        let keep = mask.check_len(self.num_frames(), &self.utterance_id)?;
        Ok(Self {
            utterance_id: self.utterance_id.clone(),
            frames: self.frames.select_rows(keep.iter()),
            energies: self.energies.as_ref().map(|e| e.select_rows(keep.iter())),
        })
    }
}

/// Where a set of frame posteriors came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosteriorSource {
    Gmm,
    ExternalSenone,
    Synthetic,
}

impl PosteriorSource {
    pub fn tag(self) -> u8 {
        match self {
            PosteriorSource::Gmm => 0,
            PosteriorSource::ExternalSenone => 1,
            PosteriorSource::Synthetic => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(PosteriorSource::Gmm),
            1 => Ok(PosteriorSource::ExternalSenone),
            2 => Ok(PosteriorSource::Synthetic),
            t => Err(Error::Format(format!("unknown posterior source tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEntry {
    pub utterance_id: String,
    /// `T x C`, rows sum to one.
    pub posteriors: DMatrix<f64>,
}

impl PosteriorEntry {
    pub fn select(&self, mask: &VadMask) -> Result<DMatrix<f64>> {
        let keep = mask.check_len(self.posteriors.nrows(), &self.utterance_id)?;
        Ok(self.posteriors.select_rows(keep.iter()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorArchive {
    pub source: PosteriorSource,
    pub entries: Vec<PosteriorEntry>,
}

impl PosteriorArchive {
    pub fn new(source: PosteriorSource) -> Self {
        Self {
            source,
            entries: Vec::new(),
        }
    }

    pub fn get(&self, utterance_id: &str) -> Option<&PosteriorEntry> {
        self.entries.iter().find(|e| e.utterance_id == utterance_id)
    }

    pub fn num_components(&self) -> Option<usize> {
        self.entries.first().map(|e| e.posteriors.ncols())
    }

    /// Every row must sum to one within `tol` with entries in `[0, 1]`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let c = self.num_components();
        for e in &self.entries {
            if Some(e.posteriors.ncols()) != c {
                return Err(Error::Dimension(format!(
                    "{}: {} posterior columns, archive has {}",
                    e.utterance_id,
                    e.posteriors.ncols(),
                    c.unwrap_or(0)
                )));
            }
            validate_rows(&e.utterance_id, &e.posteriors, tol)?;
        }
        Ok(())
    }
}

pub(crate) fn validate_rows(id: &str, p: &DMatrix<f64>, tol: f64) -> Result<()> {
    for (t, row) in p.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > tol {
            return Err(Error::Format(format!(
                "utterance {id} row {t}: posteriors sum to {sum}"
            )));
        }
        if row.iter().any(|&x| !(-tol..=1.0 + tol).contains(&x)) {
            return Err(Error::Format(format!(
                "utterance {id} row {t}: posterior outside [0, 1]"
            )));
        }
    }
    Ok(())
}
