//! i-vector/PLDA speaker verification with DNN-based mapping of
//! short-utterance i-vectors onto their long-utterance counterparts.
//!
//! The crate is organised as the pipeline runs:
//!
//! * [`ubm`]: Gaussian-mixture background model, frame posteriors, VAD and
//!   the feature/posterior archives.
//! * [`tv`]: Baum-Welch statistics and the total variability model.
//! * [`plda`]: i-vector preprocessing, LDA, G-PLDA training and LLR scoring.
//! * [`mapper`]: a small deterministic MLP engine and the two mapping
//!   schemes (autoencoder pre-training, joint regression + reconstruction).
//! * [`eval`]: EER, minDCF, DET points and i-vector diagnostics.
//! * [`corpus`]: seeded synthetic corpora, truncation, pairs and trials.

pub mod binio;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mapper;
pub mod plda;
pub mod tv;
pub mod ubm;

pub use error::{Error, Result};

pub use corpus::{
    build_pairs, build_trials, generate_corpus, truncate, GroundTruth, SyntheticCorpus,
    SyntheticSpec, TruncationSpec, WindowMode,
};
pub use eval::{
    compute_eer, compute_min_dcf, d_sl, det_points, j_ratio, mean_variance, relative_improvement,
    DcfParams, ScoredTrials,
};
pub use mapper::{
    build_phoneme_vector, AdamState, EncoderDepth, MapperConfig, MapperNetwork, PhonemeVector,
    TrainingPair,
};
pub use plda::{score_llr, train_lda, train_plda_em, PldaModel, Preprocessor, TrialSet};
pub use tv::{accumulate_stats, center_stats, extract_ivector, train_tv_em, IVector, SuffStats, TotalVariabilityModel};
pub use ubm::{
    energy_vad, gmm_posteriors, train_gmm_em, FeatureSequence, FullGmm, PosteriorArchive,
    PosteriorSource, VadMask,
};
