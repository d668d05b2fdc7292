use crate::{Error, Result};

use super::FeatureSequence;

/// Per-frame speech flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VadMask(pub Vec<bool>);

impl VadMask {
    pub fn all_speech(num_frames: usize) -> Self {
        Self(vec![true; num_frames])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_speech(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Indices of speech frames, after checking the mask covers `n` frames.
    pub(crate) fn check_len(&self, n: usize, id: &str) -> Result<Vec<usize>> {
        if self.0.len() != n {
            return Err(Error::Dimension(format!(
                "{id}: VAD mask has {} entries for {n} frames",
                self.0.len()
            )));
        }
        Ok(self
            .0
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect())
    }
}

/// A frame is speech iff its energy exceeds `threshold_fraction` times the
/// utterance's mean energy.
pub fn energy_vad(utterance: &FeatureSequence, threshold_fraction: f64) -> Result<VadMask> {
    let energies = utterance.energies.as_ref().ok_or_else(|| {
        Error::Precondition(format!(
            "{} carries no frame energies; use VadMask::all_speech instead",
            utterance.utterance_id
        ))
    })?;
    if energies.is_empty() {
        return Ok(VadMask(Vec::new()));
    }
    let threshold = threshold_fraction * energies.mean();
    Ok(VadMask(energies.iter().map(|&e| e > threshold).collect()))
}
