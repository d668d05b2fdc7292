//! Shared fixtures for the benchmarks.

use ivmap_core::corpus::{generate_corpus, SyntheticCorpus, SyntheticSpec};
use ivmap_core::eval::ScoredTrials;
use ivmap_core::mapper::TrainingPair;
use ivmap_core::tv::{accumulate_stats, center_stats, SuffStats, TotalVariabilityModel};
use ivmap_core::ubm::{gmm_posteriors, VadMask};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small corpus: 8 speakers, 32 components in 10 dimensions.
pub fn corpus() -> SyntheticCorpus {
    generate_corpus(&SyntheticSpec {
        num_speakers: 8,
        long_duration_frames: 1000,
        components: 32,
        feat_dim: 10,
        rank: 32,
        seed: 5,
        ..SyntheticSpec::default()
    })
    .expect("valid fixture spec")
}

/// Centered statistics of every utterance against the planted background model.
pub fn stats(corpus: &SyntheticCorpus) -> Vec<SuffStats> {
    corpus
        .utterances
        .iter()
        .map(|u| {
            let post = gmm_posteriors(&corpus.truth.ubm, u).expect("posteriors");
            let raw = accumulate_stats(&post, u, &VadMask::all_speech(u.num_frames())).expect("stats");
            center_stats(&raw, &corpus.truth.ubm).expect("centering")
        })
        .collect()
}

/// Total variability model built from the planted loading matrix.
pub fn planted_tv(corpus: &SyntheticCorpus) -> TotalVariabilityModel {
    let ubm = &corpus.truth.ubm;
    TotalVariabilityModel::new(corpus.truth.t.clone(), ubm.means().clone(), ubm.covariances().to_vec())
    .expect("planted model is valid")
}

/// Random short/long pairs of dimension `dim`.
pub fn pairs(n: usize, dim: usize, seed: u64) -> Vec<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let long = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let short = &long + DVector::from_fn(dim, |_, _| rng.random_range(-0.3..0.3));
            TrainingPair::new(format!("p{i}"), short, long, None).expect("finite pair")
        })
        .collect()
}

/// Scores with shifted target and nontarget distributions.
pub fn scored_trials(n: usize, seed: u64) -> ScoredTrials {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<bool> = (0..n).map(|i| i % 10 == 0).collect();
    let scores = targets
        .iter()
        .map(|&t| rng.random_range(-1.0..1.0) + if t { 1.5 } else { 0.0 })
        .collect();
    ScoredTrials::new(scores, targets).expect("finite scores")
}

/// A batch of random frames.
pub fn frames(n: usize, dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, dim, |_, _| rng.random_range(-3.0..3.0))
}
