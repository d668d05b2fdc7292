use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use crate::linalg::standard_normal;
use rayon::prelude::*;

use crate::linalg::{cholesky_jitter, orthonormal_basis};
use crate::ubm::{gmm_posteriors, FeatureSequence, FullGmm, PosteriorArchive, PosteriorEntry, PosteriorSource};
use crate::{Error, Result};

use super::GroundTruth;

/// Knobs of the synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub long_duration_frames: usize,
    pub frame_rate: usize,
    pub components: usize,
    pub feat_dim: usize,
    pub rank: usize,
    /// Rank of the speaker part of the latent; `0` means full rank.
    pub speaker_rank: usize,
    pub speaker_subspace_scale: f64,
    pub channel_noise_scale: f64,
    /// Frames per constant-component run.
    pub segment_frames: usize,
    /// Rank of the planted content subspace; `0` disables content variability.
    pub content_rank: usize,
    /// Frames sharing one content state.
    pub content_block_frames: usize,
    /// Standard deviation of the content offset per dimension for a unit content state.
    pub content_noise_scale: f64,
    /// Standard deviation of the log-weight tilt a unit content state applies to
    /// the component probabilities.
    pub content_phonetic_scale: f64,
    /// Standard deviation of the supervector offset per dimension for a unit latent.
    pub offset_scale: f64,
    /// Standard deviation of the planted UBM means.
    pub mean_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_speakers: 20,
            utterances_per_speaker: 2,
            long_duration_frames: 3000,
            frame_rate: 100,
            components: 16,
            feat_dim: 8,
            rank: 8,
            speaker_rank: 0,
            speaker_subspace_scale: 1.0,
            channel_noise_scale: 0.5,
            segment_frames: 1,
            content_rank: 0,
            content_block_frames: 200,
            content_noise_scale: 0.0,
            content_phonetic_scale: 0.0,
            offset_scale: 0.5,
            mean_spread: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_speakers", self.num_speakers),
            ("utterances_per_speaker", self.utterances_per_speaker),
            ("long_duration_frames", self.long_duration_frames),
            ("frame_rate", self.frame_rate),
            ("components", self.components),
            ("feat_dim", self.feat_dim),
            ("rank", self.rank),
            ("segment_frames", self.segment_frames),
            ("content_block_frames", self.content_block_frames),
        ];
        let mut bad: Vec<String> = counts
            .iter()
            .filter(|(_, v)| *v == 0)
            .map(|(k, _)| format!("{k} must be >= 1"))
            .collect();
        for (k, v) in [
            ("speaker_subspace_scale", self.speaker_subspace_scale),
            ("channel_noise_scale", self.channel_noise_scale),
            ("offset_scale", self.offset_scale),
            ("mean_spread", self.mean_spread),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{k} must be > 0"));
            }
        }
        for (k, v) in [
            ("content_noise_scale", self.content_noise_scale),
            ("content_phonetic_scale", self.content_phonetic_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(format!("{k} must be >= 0"));
            }
        }
        if self.speaker_rank > self.rank {
            bad.push("speaker_rank must not exceed rank".into());
        }
        if self.rank > self.components * self.feat_dim {
            bad.push("rank must not exceed components * feat_dim".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Precondition(bad.join("; ")))
        }
    }
}

/// Generated long utterances with their speaker labels and planted truth.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub utterances: Vec<FeatureSequence>,
    /// Speaker id per utterance.
    pub speakers: Vec<String>,
    pub truth: GroundTruth,
}

impl SyntheticCorpus {
    /// Frame posteriors of the planted UBM, standing in for an external
    /// senone classifier.
    pub fn senone_posteriors(&self) -> Result<PosteriorArchive> {
        let entries = self
            .utterances
            .par_iter()
            .map(|u| {
                Ok(PosteriorEntry {
                    utterance_id: u.utterance_id.clone(),
                    posteriors: gmm_posteriors(&self.truth.ubm, u)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorArchive {
            source: PosteriorSource::ExternalSenone,
            entries,
        })
    }
}

fn speaker_name(index: usize) -> String {
    // alternate cohorts so a gender-style split is always populated
    let cohort = if index % 2 == 0 { 'f' } else { 'm' };
    format!("{cohort}{:04}", index + 1)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    standard_normal(rng)
}

fn planted_ubm(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<FullGmm> {
    let (c, d) = (spec.components, spec.feat_dim);
    let raw: Vec<f64> = (0..c).map(|_| 0.5 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut weights = DVector::from_iterator(c, raw.iter().map(|w| w / total));
    // renormalise the rounding residue into the largest weight
    let residue = 1.0 - weights.sum();
    let imax = weights.imax();
    weights[imax] += residue;
    let means = DMatrix::from_fn(c, d, |_, _| spec.mean_spread * gaussian(rng));
    let covariances = (0..c)
        .map(|_| {
            let diag = DVector::from_fn(d, |_, _| 0.5 + rng.random::<f64>());
            let b = DMatrix::from_fn(d, d, |_, _| 0.3 * gaussian(rng) / (d as f64).sqrt());
            DMatrix::from_diagonal(&diag) + &b * b.transpose()
        })
        .collect();
    FullGmm::new(weights, means, covariances, false)
}

/// Draw a corpus from the planted model. Identical specs give bit-identical output.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ubm = planted_ubm(spec, &mut rng)?;
    let (c, d, r) = (spec.components, spec.feat_dim, spec.rank);
    let t_scale = spec.offset_scale / (r as f64).sqrt();
    let t = DMatrix::from_fn(c * d, r, |_, _| t_scale * gaussian(&mut rng));

    let k = spec.content_rank;
    let v_scale = if k == 0 { 0.0 } else { spec.content_noise_scale / (k as f64).sqrt() };
    let content = DMatrix::from_fn(c * d, k, |_, _| v_scale * gaussian(&mut rng));
    let g_scale = if k == 0 { 0.0 } else { spec.content_phonetic_scale / (k as f64).sqrt() };
    let content_tilt = DMatrix::from_fn(c, k, |_, _| g_scale * gaussian(&mut rng));

    let q = if spec.speaker_rank == 0 { r } else { spec.speaker_rank };
    let basis = if q == r {
        DMatrix::identity(r, r)
    } else {
        let raw = DMatrix::from_fn(r, q, |_, _| gaussian(&mut rng));
        orthonormal_basis(&raw) * (r as f64 / q as f64).sqrt()
    };
    let speakers: Vec<String> = (0..spec.num_speakers).map(speaker_name).collect();
    let speaker_latents: Vec<DVector<f64>> = (0..spec.num_speakers)
        .map(|_| {
            let x = DVector::from_fn(q, |_, _| gaussian(&mut rng));
            &basis * x * spec.speaker_subspace_scale
        })
        .collect();

    let mut utterances = Vec::new();
    let mut utterance_speaker = Vec::new();
    let mut utterance_latents = Vec::new();
    for (s, name) in speakers.iter().enumerate() {
        for k in 0..spec.utterances_per_speaker {
            utterances.push(format!("{name}-u{k:02}"));
            utterance_speaker.push(s);
            let eps = DVector::from_fn(r, |_, _| gaussian(&mut rng));
            utterance_latents.push(&speaker_latents[s] + eps * spec.channel_noise_scale);
        }
    }
    let truth = GroundTruth {
        ubm,
        t,
        content,
        content_tilt,
        speakers: speakers.clone(),
        speaker_latents,
        utterances,
        utterance_speaker,
        utterance_latents,
    };

    let factors = truth
        .ubm
        .covariances()
        .iter()
        .map(|s| cholesky_jitter(s).map(|ch| ch.l()))
        .collect::<Result<Vec<_>>>()?;
    let cumulative = cumulative_weights(truth.ubm.weights());

    let seqs = (0..truth.utterances.len())
        .into_par_iter()
        .map(|u| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(u as u64 + 1);
            sample_utterance(spec, &truth, u, &factors, cumulative.clone(), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = truth
        .utterance_speaker
        .iter()
        .map(|&s| speakers[s].clone())
        .collect();
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        utterances: seqs,
        speakers: labels,
        truth,
    })
}

fn cumulative_weights(weights: &DVector<f64>) -> Vec<f64> {
    let total = weights.sum();
    weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect()
}

fn sample_utterance(
    spec: &SyntheticSpec,
    truth: &GroundTruth,
    u: usize,
    factors: &[DMatrix<f64>],
    mut cumulative: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureSequence> {
    let d = spec.feat_dim;
    let n = spec.long_duration_frames;
    let shifted = truth.ubm.means() + truth.offsets(&truth.utterance_latents[u]);
    let mut frames = DMatrix::zeros(n, d);
    let k = truth.content.ncols();
    let mut comp = 0;
    // content offsets of every component for the current content state, C x D
    let mut content = DMatrix::zeros(truth.t.nrows() / d, d);
    for t in 0..n {
        if k > 0 && t % spec.content_block_frames == 0 {
            let z = DVector::from_fn(k, |_, _| gaussian(rng));
            let flat = &truth.content * &z;
            content = DMatrix::from_fn(content.nrows(), d, |i, j| flat[i * d + j]);
            if spec.content_phonetic_scale > 0.0 {
                let tilt = &truth.content_tilt * &z;
                let w = truth.ubm.weights().zip_map(&tilt, |w, g| w * g.exp());
                cumulative = cumulative_weights(&w);
            }
        }
        if t % spec.segment_frames == 0 {
            let x: f64 = rng.random();
            comp = cumulative.iter().position(|&c| x < c).unwrap_or(cumulative.len() - 1);
        }
        let z = DVector::from_fn(d, |_, _| gaussian(rng));
        let y = &factors[comp] * z;
        for j in 0..d {
            // stored as f32 on disk, so keep the in-memory copy exactly representable
            frames[(t, j)] = (shifted[(comp, j)] + content[(comp, j)] + y[j]) as f32 as f64;
        }
    }
    let energies = DVector::from_element(n, 10.0);
    FeatureSequence::new(truth.utterances[u].clone(), frames, Some(energies))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tv::{accumulate_stats, center_stats};
    use crate::ubm::VadMask;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            num_speakers: 4,
            utterances_per_speaker: 2,
            long_duration_frames: 200,
            seed: 11,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a.utterances, b.utterances);
        assert_eq!(a.truth, b.truth);
        let c = generate_corpus(&SyntheticSpec { seed: 12, ..small() }).unwrap();
        assert_ne!(a.utterances[0].frames, c.utterances[0].frames);
    }

    #[test]
    fn ids_labels_and_cohorts() {
        let c = generate_corpus(&small()).unwrap();
        assert_eq!(c.utterances[0].utterance_id, "f0001-u00");
        assert_eq!(c.utterances[3].utterance_id, "m0002-u01");
        assert_eq!(c.speakers[3], "m0002");
        assert!(c.utterances.iter().all(|u| u.energies.as_ref().unwrap().iter().all(|&e| e == 10.0)));
    }

    #[test]
    fn duplicated_noise_free_utterances_give_identical_stats() {
        let spec = SyntheticSpec {
            utterances_per_speaker: 1,
            channel_noise_scale: f64::MIN_POSITIVE,
            ..small()
        };
        let c = generate_corpus(&spec).unwrap();
        let utt = &c.utterances[0];
        let copy = FeatureSequence { utterance_id: "dup".into(), ..utt.clone() };
        let mask = VadMask::all_speech(utt.num_frames());
        let post = gmm_posteriors(&c.truth.ubm, utt).unwrap();
        let post_copy = gmm_posteriors(&c.truth.ubm, &copy).unwrap();
        let a = center_stats(&accumulate_stats(&post, utt, &mask).unwrap(), &c.truth.ubm).unwrap();
        let b = center_stats(&accumulate_stats(&post_copy, &copy, &mask).unwrap(), &c.truth.ubm).unwrap();
        assert_eq!(a.zeroth, b.zeroth);
        assert_eq!(a.first, b.first);
    }

    #[test]
    fn component_occupancy_within_multinomial_bounds() {
        let spec = SyntheticSpec {
            num_speakers: 1,
            utterances_per_speaker: 1,
            long_duration_frames: 20000,
            mean_spread: 20.0,
            ..small()
        };
        let c = generate_corpus(&spec).unwrap();
        let post = gmm_posteriors(&c.truth.ubm, &c.utterances[0]).unwrap();
        let n = spec.long_duration_frames as f64;
        for (k, &w) in c.truth.ubm.weights().iter().enumerate() {
            let occ = post.column(k).sum();
            let sd = (n * w * (1.0 - w)).sqrt();
            assert!((occ - n * w).abs() < 3.0 * sd + 1.0, "component {k}: {occ} vs {}", n * w);
        }
    }

    #[test]
    fn invalid_spec_lists_every_problem() {
        let spec = SyntheticSpec {
            num_speakers: 0,
            feat_dim: 0,
            offset_scale: -1.0,
            ..small()
        };
        let msg = generate_corpus(&spec).unwrap_err().to_string();
        assert!(msg.contains("num_speakers") && msg.contains("feat_dim") && msg.contains("offset_scale"));
    }
}
