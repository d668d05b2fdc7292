//! In-memory end-to-end experiment: corpus, front end, back end and mapper,
//! shared by the sweep subcommands and the acceptance runner.

use std::collections::HashMap;

use ivmap_core::corpus::{build_pairs, build_trials, truncate, SyntheticCorpus};
use ivmap_core::eval::{compute_eer, compute_min_dcf, d_sl, j_ratio, DcfParams, ScoredTrials};
use ivmap_core::mapper::{
    build_phoneme_vector, train_dnn1, train_dnn2, EncoderDepth, MapperConfig, MapperMethod, MapperNetwork,
    MapperTraining, PhonemeVector, TrainingPair,
};
use ivmap_core::plda::{preprocess, score_llr, train_lda, train_plda_em, PldaConfig, PldaModel, Preprocessor, TrialSet};
use ivmap_core::tv::{accumulate_stats, center_stats, train_tv_em, IVector, SuffStats, TvConfig};
use ivmap_core::ubm::{gmm_posteriors, train_gmm_em, FeatureSequence, FullGmm, GmmConfig, VadMask};
use ivmap_core::{Error, Result, TruncationSpec};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Which i-vectors the PLDA back end is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PldaTrainSet {
    Long,
    Short,
}

impl std::str::FromStr for PldaTrainSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(Self::Long),
            "short" => Ok(Self::Short),
            _ => Err(Error::Precondition(format!("plda train set must be long or short, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FrontEndSpec {
    pub eval_speakers: usize,
    pub truncation: TruncationSpec,
    /// `None` scores frames with the planted background model.
    pub ubm: Option<GmmConfig>,
    /// Frames per utterance used for background-model training (`0` = all).
    pub ubm_frames_per_utterance: usize,
    pub tv: TvConfig,
    pub phoneme_scale: f64,
}

#[derive(Clone, Debug)]
pub struct BackEndSpec {
    pub lda_dim: usize,
    pub plda: PldaConfig,
    pub train_set: PldaTrainSet,
    pub num_target: Option<usize>,
    pub num_nontarget: Option<usize>,
    pub trial_seed: u64,
}

/// One side (training or evaluation speakers) of the extracted data.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub long: Vec<IVector>,
    pub long_speakers: Vec<String>,
    pub short: Vec<IVector>,
    pub short_speakers: Vec<String>,
    /// Scaled mean senone posteriors of every short segment.
    pub short_phonemes: Vec<PhonemeVector>,
    /// Index into `long` of each short segment's parent.
    pub short_parent: Vec<usize>,
}

impl Split {
    pub fn pairs(&self, with_phonemes: bool) -> Result<Vec<TrainingPair>> {
        let phon = with_phonemes.then_some(self.short_phonemes.as_slice());
        build_pairs(&self.short, &self.long, phon)
    }

    /// Parent long i-vector of every short segment.
    pub fn parents(&self) -> Vec<DVector<f64>> {
        self.short_parent.iter().map(|&p| self.long[p].mean.clone()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FrontEnd {
    pub ubm: FullGmm,
    pub train: Split,
    pub eval: Split,
}

/// Scores of one evaluation arm.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub eer: f64,
    pub dcf08: f64,
    pub dcf10: f64,
    pub d_sl: f64,
    pub j_ratio: f64,
}

impl Metrics {
    pub fn rows(&self) -> Vec<(String, f64)> {
        vec![
            ("eer".into(), self.eer),
            ("dcf08".into(), self.dcf08),
            ("dcf10".into(), self.dcf10),
            ("d_sl".into(), self.d_sl),
            ("j_ratio".into(), self.j_ratio),
        ]
    }
}

/// Synthetic utterances carry no silence, so every frame is kept.
fn mask_for(u: &FeatureSequence) -> VadMask {
    VadMask::all_speech(u.num_frames())
}

struct Extracted {
    stats: SuffStats,
    phoneme: PhonemeVector,
}

struct Utterance {
    long: SuffStats,
    segments: Vec<(usize, Extracted)>,
}

/// Long statistics plus, for every truncated segment, statistics and a
/// phoneme vector sliced from the parent's frame posteriors.
fn process_utterance(
    utt: &FeatureSequence,
    index: usize,
    ubm: &FullGmm,
    senone_model: &FullGmm,
    planted: bool,
    spec: &FrontEndSpec,
) -> Result<Utterance> {
    let senones = gmm_posteriors(senone_model, utt)?;
    let posteriors = if planted { senones.clone() } else { gmm_posteriors(ubm, utt)? };
    let long = center_stats(&accumulate_stats(&posteriors, utt, &mask_for(utt))?, ubm)?;
    let segments = truncate(utt, &spec.truncation, index)
        .into_iter()
        .map(|seg| {
            let r = &seg.record;
            let mask = mask_for(&seg.features);
            let post = posteriors.rows(r.start_frame, r.num_frames).into_owned();
            let stats = center_stats(&accumulate_stats(&post, &seg.features, &mask)?, ubm)?;
            let sen = senones.rows(r.start_frame, r.num_frames).into_owned();
            let phoneme = build_phoneme_vector(&sen, &mask, spec.phoneme_scale)?;
            Ok((index, Extracted { stats, phoneme }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Utterance { long, segments })
}

/// Train (or take) the background model, extract long and short statistics,
/// train the total variability model on the training speakers' long
/// utterances and extract every i-vector.
pub fn run_front_end(corpus: &SyntheticCorpus, spec: &FrontEndSpec) -> Result<FrontEnd> {
    let n_spk = corpus.truth.speakers.len();
    if spec.eval_speakers == 0 || spec.eval_speakers >= n_spk {
        return Err(Error::Precondition(format!(
            "eval_speakers must lie in 1..{n_spk}, got {}",
            spec.eval_speakers
        )));
    }
    let eval_from = n_spk - spec.eval_speakers;
    let is_eval: Vec<bool> = corpus.truth.utterance_speaker.iter().map(|&s| s >= eval_from).collect();

    let ubm = match &spec.ubm {
        None => corpus.truth.ubm.clone(),
        Some(cfg) => {
            let subset: Vec<FeatureSequence> = corpus
                .utterances
                .iter()
                .zip(&is_eval)
                .filter(|(_, e)| !**e)
                .map(|(u, _)| {
                    let n = match spec.ubm_frames_per_utterance {
                        0 => u.num_frames(),
                        n => n.min(u.num_frames()),
                    };
                    u.slice(u.utterance_id.clone(), 0, n)
                })
                .collect();
            train_gmm_em(&subset, cfg)?.gmm
        }
    };

    let processed: Vec<Utterance> = corpus
        .utterances
        .par_iter()
        .enumerate()
        .map(|(i, u)| process_utterance(u, i, &ubm, &corpus.truth.ubm, spec.ubm.is_none(), spec))
        .collect::<Result<Vec<_>>>()?;
    let mut long_stats = Vec::with_capacity(processed.len());
    let mut short = Vec::new();
    for p in processed {
        long_stats.push(p.long);
        short.extend(p.segments);
    }
    let (seg_parent, short): (Vec<usize>, Vec<Extracted>) = short.into_iter().unzip();

    let tv_train: Vec<SuffStats> = long_stats
        .iter()
        .zip(&is_eval)
        .filter(|(_, e)| !**e)
        .map(|(s, _)| s.clone())
        .collect();
    let tv = train_tv_em(&tv_train, &ubm, &spec.tv)?.model;
    let extractor = tv.extractor()?;
    let long_iv: Vec<IVector> = long_stats.par_iter().map(|s| extractor.extract(s)).collect::<Result<_>>()?;
    let short_iv: Vec<IVector> = short.par_iter().map(|s| extractor.extract(&s.stats)).collect::<Result<_>>()?;

    let mut splits = [Split::default(), Split::default()];
    let mut local = vec![0usize; corpus.utterances.len()];
    for (i, iv) in long_iv.into_iter().enumerate() {
        let side = &mut splits[is_eval[i] as usize];
        local[i] = side.long.len();
        side.long.push(iv);
        side.long_speakers.push(corpus.speakers[i].clone());
    }
    for ((iv, ext), &p) in short_iv.into_iter().zip(short).zip(&seg_parent) {
        let side = &mut splits[is_eval[p] as usize];
        side.short.push(iv);
        side.short_speakers.push(corpus.speakers[p].clone());
        side.short_phonemes.push(ext.phoneme);
        side.short_parent.push(local[p]);
    }
    let [train, eval] = splits;
    Ok(FrontEnd { ubm, train, eval })
}

/// PLDA back end with its preprocessing plus the evaluation trial list.
#[derive(Clone, Debug)]
pub struct BackEnd {
    pub plda: PldaModel,
    pub trials: TrialSet,
}

/// Preprocessing fitted on the back-end training vectors: global mean and,
/// when `lda_dim > 0`, an LDA projection of the centered vectors.
pub fn fit_preprocessor(vectors: &[IVector], speakers: &[String], lda_dim: usize) -> Result<Preprocessor> {
    let mut prep = Preprocessor::fit(vectors)?;
    if lda_dim > 0 {
        let centered: Vec<DVector<f64>> = vectors.iter().map(|v| prep.center(&v.mean)).collect();
        prep.lda = Some(train_lda(&centered, speakers, lda_dim)?);
    }
    Ok(prep)
}

/// Apply `prep`, train the PLDA model and attach the preprocessing to it.
pub fn train_plda_backend(
    vectors: &[IVector],
    speakers: &[String],
    prep: Preprocessor,
    cfg: &PldaConfig,
) -> Result<PldaModel> {
    let (ready, prep) = preprocess(vectors, false, Some(&prep))?;
    let means: Vec<DVector<f64>> = ready.into_iter().map(|v| v.mean).collect();
    train_plda_em(&means, speakers, cfg)?.model.with_preprocessing(Some(prep))
}

pub fn train_back_end(train: &Split, eval: &Split, spec: &BackEndSpec) -> Result<BackEnd> {
    let (vectors, speakers) = match spec.train_set {
        PldaTrainSet::Long => (&train.long, &train.long_speakers),
        PldaTrainSet::Short => (&train.short, &train.short_speakers),
    };
    let prep = fit_preprocessor(vectors, speakers, spec.lda_dim)?;
    let plda = train_plda_backend(vectors, speakers, prep, &spec.plda)?;
    let ids: Vec<String> = eval.short.iter().map(|v| v.utterance_id.clone()).collect();
    let trials = build_trials(&ids, &eval.short_speakers, spec.num_target, spec.num_nontarget, spec.trial_seed)?;
    Ok(BackEnd { plda, trials })
}

/// Score a trial list against vectors looked up by id. The vectors are
/// preprocessed with the model's stored transform first.
pub fn score_trials(plda: &PldaModel, trials: &TrialSet, vectors: &[IVector]) -> Result<ScoredTrials> {
    let prepared: HashMap<&str, IVector> = vectors
        .iter()
        .map(|v| Ok((v.utterance_id.as_str(), plda.prepare(v)?)))
        .collect::<Result<_>>()?;
    let lookup = |id: &str| {
        prepared
            .get(id)
            .ok_or_else(|| Error::Precondition(format!("trial references unknown i-vector {id}")))
    };
    let mut scores = Vec::with_capacity(trials.trials.len());
    let mut targets = Vec::with_capacity(trials.trials.len());
    for t in &trials.trials {
        scores.push(score_llr(plda, lookup(&t.enroll)?, lookup(&t.test)?)?);
        targets.push(t.target);
    }
    ScoredTrials::new(scores, targets)
}

/// J-ratio of vectors after the back end's preprocessing, which is the
/// representation the scorer sees.
pub fn backend_j_ratio(plda: &PldaModel, vectors: &[IVector], speakers: &[String]) -> Result<f64> {
    let prepared: Vec<DVector<f64>> = vectors.iter().map(|v| Ok(plda.prepare(v)?.mean)).collect::<Result<_>>()?;
    j_ratio(&prepared, speakers)
}

/// Metrics of an arm that scores `vectors` (one per evaluation short
/// segment, in order). D_sl is measured against each segment's parent long
/// i-vector; the J-ratio is taken over the evaluation speakers in the
/// back end's preprocessed space.
pub fn evaluate_arm(eval: &Split, back: &BackEnd, vectors: &[IVector]) -> Result<Metrics> {
    let scored = score_trials(&back.plda, &back.trials, vectors)?;
    let means: Vec<DVector<f64>> = vectors.iter().map(|v| v.mean.clone()).collect();
    Ok(Metrics {
        eer: compute_eer(&scored)?,
        dcf08: compute_min_dcf(&scored, &DcfParams::SRE08)?,
        dcf10: compute_min_dcf(&scored, &DcfParams::SRE10)?,
        d_sl: d_sl(&means, &eval.parents())?,
        j_ratio: backend_j_ratio(&back.plda, vectors, &eval.short_speakers)?,
    })
}

#[derive(Clone, Debug)]
pub struct MapperSpec {
    pub method: MapperMethod,
    pub config: MapperConfig,
    pub alpha: f64,
    pub iters: usize,
    pub pretrain_iters: usize,
    pub use_phonemes: bool,
    pub seed: u64,
}

impl MapperSpec {
    pub fn depth(&self) -> EncoderDepth {
        self.config.depth
    }
}

pub fn train_mapper(pairs: &[TrainingPair], spec: &MapperSpec) -> Result<MapperTraining> {
    match spec.method {
        MapperMethod::Dnn2 => train_dnn2(pairs, &spec.config, spec.alpha, spec.iters, spec.seed),
        MapperMethod::Dnn1 => train_dnn1(pairs, &spec.config, spec.pretrain_iters, spec.iters, spec.seed),
    }
}

/// Map every evaluation short i-vector, keeping ids.
pub fn map_split(net: &MapperNetwork, split: &Split) -> Result<Vec<IVector>> {
    if split.short.is_empty() {
        return Ok(Vec::new());
    }
    let r = split.short[0].dim();
    let x = DMatrix::from_fn(r, split.short.len(), |i, j| split.short[j].mean[i]);
    let phon = (net.phoneme_dim > 0).then(|| {
        let p = net.phoneme_dim;
        DMatrix::from_fn(p, split.short_phonemes.len(), |i, j| split.short_phonemes[j].values[i])
    });
    let y = net.map_batch(&x, phon.as_ref())?;
    Ok(split
        .short
        .iter()
        .enumerate()
        .map(|(j, v)| IVector::new(v.utterance_id.clone(), y.column(j).into_owned()))
        .collect())
}
