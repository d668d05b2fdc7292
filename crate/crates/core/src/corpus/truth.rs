use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::binio;
use crate::ubm::FullGmm;
use crate::Result;

/// Everything planted by the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub ubm: FullGmm,
    /// Planted total variability matrix, `C*D x R`, component-major rows.
    pub t: DMatrix<f64>,
    /// Planted content loading matrix, `C*D x K` (`K` may be zero).
    pub content: DMatrix<f64>,
    /// Log-weight tilt of the component probabilities per content state, `C x K`.
    pub content_tilt: DMatrix<f64>,
    pub speakers: Vec<String>,
    /// Speaker-level latent (the part of each i-vector shared by a speaker).
    pub speaker_latents: Vec<DVector<f64>>,
    pub utterances: Vec<String>,
    /// Index into `speakers` for every utterance.
    pub utterance_speaker: Vec<usize>,
    /// Per-utterance latent `w`.
    pub utterance_latents: Vec<DVector<f64>>,
}

impl GroundTruth {
    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    /// Supervector offset `T w` reshaped to `C x D`.
    pub fn offsets(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let c = self.ubm.num_components();
        let d = self.ubm.dim();
        let flat = &self.t * w;
        DMatrix::from_fn(c, d, |i, j| flat[i * d + j])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        binio::write_magic(&mut w, b"GT01")?;
        let c = self.ubm.num_components();
        let d = self.ubm.dim();
        let r = self.rank();
        for v in [c, d, r, self.speakers.len(), self.utterances.len()] {
            binio::write_u32(&mut w, v)?;
        }
        binio::write_vector_f64(&mut w, self.ubm.weights())?;
        binio::write_matrix_f64(&mut w, self.ubm.means())?;
        for s in self.ubm.covariances() {
            binio::write_matrix_f64(&mut w, s)?;
        }
        binio::write_matrix_f64(&mut w, &self.t)?;
        binio::write_u32(&mut w, self.content.ncols())?;
        binio::write_matrix_f64(&mut w, &self.content)?;
        binio::write_matrix_f64(&mut w, &self.content_tilt)?;
        for (id, y) in self.speakers.iter().zip(&self.speaker_latents) {
            binio::write_id(&mut w, id)?;
            binio::write_vector_f64(&mut w, y)?;
        }
        for ((id, &s), lat) in self
            .utterances
            .iter()
            .zip(&self.utterance_speaker)
            .zip(&self.utterance_latents)
        {
            binio::write_id(&mut w, id)?;
            binio::write_u32(&mut w, s)?;
            binio::write_vector_f64(&mut w, lat)?;
        }
        binio::flush(w, path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        binio::expect_magic(&mut r, b"GT01")?;
        let c = binio::read_u32(&mut r)?;
        let d = binio::read_u32(&mut r)?;
        let rank = binio::read_u32(&mut r)?;
        let ns = binio::read_u32(&mut r)?;
        let nu = binio::read_u32(&mut r)?;
        let weights = binio::read_vector_f64(&mut r, c)?;
        let means = binio::read_matrix_f64(&mut r, c, d)?;
        let covs = (0..c)
            .map(|_| binio::read_matrix_f64(&mut r, d, d))
            .collect::<Result<Vec<_>>>()?;
        let ubm = FullGmm::new(weights, means, covs, false)?;
        let t = binio::read_matrix_f64(&mut r, c * d, rank)?;
        let k = binio::read_u32(&mut r)?;
        let content = binio::read_matrix_f64(&mut r, c * d, k)?;
        let content_tilt = binio::read_matrix_f64(&mut r, c, k)?;
        let mut speakers = Vec::with_capacity(ns);
        let mut speaker_latents = Vec::with_capacity(ns);
        for _ in 0..ns {
            speakers.push(binio::read_id(&mut r)?);
            speaker_latents.push(binio::read_vector_f64(&mut r, rank)?);
        }
        let mut utterances = Vec::with_capacity(nu);
        let mut utterance_speaker = Vec::with_capacity(nu);
        let mut utterance_latents = Vec::with_capacity(nu);
        for _ in 0..nu {
            utterances.push(binio::read_id(&mut r)?);
            let s = binio::read_u32(&mut r)?;
            if s >= ns {
                return Err(crate::Error::Format(format!("speaker index {s} out of range")));
            }
            utterance_speaker.push(s);
            utterance_latents.push(binio::read_vector_f64(&mut r, rank)?);
        }
        Ok(Self {
            ubm,
            t,
            content,
            content_tilt,
            speakers,
            speaker_latents,
            utterances,
            utterance_speaker,
            utterance_latents,
        })
    }
}
