//! Subcommands. Each one reads configured artifacts, writes its outputs and
//! leaves a JSON manifest in `manifest_dir`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use ivmap_core::corpus::{
    parent_id, read_labels, read_truncation_records, truncate_all, write_labels, write_truncation_records,
    TruncationRecord,
};
use ivmap_core::eval::{det_points, write_det_csv, write_metrics_csv, write_metrics_text};
use ivmap_core::mapper::{build_phoneme_vector, MapperConfig, MapperNetwork, PhonemeVector};
use ivmap_core::plda::{read_scores, read_trials, write_scores, write_trials, PldaConfig, PldaModel, ScoreLine, TrialSet};
use ivmap_core::tv::{
    read_ivectors, read_stats, write_ivectors, write_stats, IVector, SuffStats, TotalVariabilityModel, TvConfig,
};
use ivmap_core::ubm::{
    gmm_from_posteriors, gmm_posteriors, load_posterior_archive, read_feature_archive, write_feature_archive,
    write_posterior_archive, FeatureSequence, FullGmm, GmmConfig, PosteriorArchive, PosteriorEntry, PosteriorSource,
    VadMask,
};
use ivmap_core::{
    accumulate_stats, build_trials, center_stats, compute_eer, compute_min_dcf, d_sl, energy_vad, generate_corpus,
    train_gmm_em, train_tv_em, DcfParams, Error, ScoredTrials, SyntheticSpec, TruncationSpec,
};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{digests, RunManifest};
use crate::pipeline::{
    backend_j_ratio, evaluate_arm, fit_preprocessor, map_split, score_trials, train_mapper, train_plda_backend,
    BackEnd, MapperSpec, PldaTrainSet, Split,
};

type CliResult<T> = Result<T, CliError>;

pub const SUBCOMMANDS: &[&str] = &[
    "synth-corpus",
    "train-ubm",
    "posteriors",
    "stats",
    "train-tv",
    "extract",
    "train-plda",
    "train-lda",
    "train-mapper",
    "map",
    "score",
    "evaluate",
    "sweep-alpha",
    "sweep-depth",
];

/// Bookkeeping of one subcommand invocation.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    name: &'static str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    start: Instant,
}

impl<'a> Run<'a> {
    fn input(&mut self, key: &str) -> PathBuf {
        let p = self.cfg.path(key);
        if !self.inputs.contains(&p) {
            self.inputs.push(p.clone());
        }
        p
    }

    fn output(&mut self, key: &str) -> CliResult<PathBuf> {
        let p = self.cfg.path(key);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        }
        if !self.outputs.contains(&p) {
            self.outputs.push(p.clone());
        }
        Ok(p)
    }

    fn finish(self) -> CliResult<PathBuf> {
        let manifest = RunManifest {
            subcommand: self.name.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.cfg.snapshot().clone(),
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
        };
        let path = self.cfg.path("manifest_dir").join(format!("{}.json", self.name));
        manifest.write(&path)?;
        Ok(path)
    }
}

/// Run one subcommand and return the path of its manifest.
pub fn run(subcommand: &str, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let name = SUBCOMMANDS
        .iter()
        .copied()
        .find(|s| *s == subcommand)
        .ok_or_else(|| CliError::Usage(format!("unknown subcommand {subcommand:?}; expected one of {}", SUBCOMMANDS.join(", "))))?;
    let mut run = Run {
        cfg,
        name,
        inputs: Vec::new(),
        outputs: Vec::new(),
        start: Instant::now(),
    };
    match name {
        "synth-corpus" => synth_corpus(&mut run)?,
        "train-ubm" => train_ubm(&mut run)?,
        "posteriors" => posteriors(&mut run)?,
        "stats" => stats(&mut run)?,
        "train-tv" => train_tv(&mut run)?,
        "extract" => extract(&mut run)?,
        "train-lda" => train_lda(&mut run)?,
        "train-plda" => train_plda(&mut run)?,
        "train-mapper" => train_mapper_cmd(&mut run)?,
        "map" => map(&mut run)?,
        "score" => score(&mut run)?,
        "evaluate" => evaluate(&mut run)?,
        "sweep-alpha" => sweep(&mut run, Sweep::Alpha)?,
        "sweep-depth" => sweep(&mut run, Sweep::Depth)?,
        _ => unreachable!("subcommand table and dispatch disagree"),
    }
    run.finish()
}

fn truncation_spec(cfg: &ExperimentConfig) -> TruncationSpec {
    TruncationSpec::new(cfg.parsed("window"), cfg.int("frame_rate"))
}

fn trial_count(cfg: &ExperimentConfig, key: &str) -> Option<usize> {
    match cfg.int(key) {
        0 => None,
        n => Some(n),
    }
}

fn synth_corpus(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg;
    let spec = SyntheticSpec {
        num_speakers: cfg.int("num_speakers"),
        utterances_per_speaker: cfg.int("utterances_per_speaker"),
        long_duration_frames: cfg.int("long_frames"),
        frame_rate: cfg.int("frame_rate"),
        components: cfg.int("corpus_components"),
        feat_dim: cfg.int("feat_dim"),
        rank: cfg.int("true_rank"),
        speaker_rank: cfg.int("speaker_rank"),
        speaker_subspace_scale: cfg.float("speaker_scale"),
        channel_noise_scale: cfg.float("channel_scale"),
        segment_frames: cfg.int("run_frames"),
        content_rank: cfg.int("content_rank"),
        content_block_frames: cfg.int("content_block_frames"),
        content_noise_scale: cfg.float("content_scale"),
        content_phonetic_scale: cfg.float("content_phonetic_scale"),
        offset_scale: cfg.float("offset_scale"),
        mean_spread: cfg.float("mean_spread"),
        seed: cfg.seed(),
    };
    let eval_speakers = cfg.int("eval_speakers");
    if eval_speakers == 0 || eval_speakers >= spec.num_speakers {
        return Err(CliError::Config(vec![format!(
            "eval_speakers: must lie in 1..{} (got {eval_speakers})",
            spec.num_speakers
        )]));
    }
    let corpus = generate_corpus(&spec)?;
    let eval_from = spec.num_speakers - eval_speakers;
    let is_eval: Vec<bool> = corpus.truth.utterance_speaker.iter().map(|&s| s >= eval_from).collect();

    write_feature_archive(&run.output("features_long")?, &corpus.utterances)?;
    let segments = truncate_all(&corpus.utterances, &truncation_spec(cfg));
    let records: Vec<TruncationRecord> = segments.iter().map(|s| s.record.clone()).collect();
    write_truncation_records(&run.output("truncation")?, &records)?;
    let short: Vec<FeatureSequence> = segments.into_iter().map(|s| s.features).collect();
    write_feature_archive(&run.output("features_short")?, &short)?;
    write_posterior_archive(&run.output("senones_long")?, &corpus.senone_posteriors()?)?;

    let parent_index: HashMap<&str, usize> = corpus
        .utterances
        .iter()
        .enumerate()
        .map(|(i, u)| (u.utterance_id.as_str(), i))
        .collect();
    let mut sides: [(Vec<String>, Vec<String>); 2] = Default::default();
    for (i, u) in corpus.utterances.iter().enumerate() {
        let side = &mut sides[is_eval[i] as usize];
        side.0.push(u.utterance_id.clone());
        side.1.push(corpus.speakers[i].clone());
    }
    let mut eval_short = (Vec::new(), Vec::new());
    for r in &records {
        let p = parent_index[r.parent_id.as_str()];
        let side = &mut sides[is_eval[p] as usize];
        side.0.push(r.segment_id.clone());
        side.1.push(corpus.speakers[p].clone());
        if is_eval[p] {
            eval_short.0.push(r.segment_id.clone());
            eval_short.1.push(corpus.speakers[p].clone());
        }
    }
    write_labels(&run.output("labels_train")?, &sides[0].0, &sides[0].1)?;
    write_labels(&run.output("labels_eval")?, &sides[1].0, &sides[1].1)?;
    corpus.truth.write(&run.output("truth")?)?;
    let trials = build_trials(
        &eval_short.0,
        &eval_short.1,
        trial_count(cfg, "num_target_trials"),
        trial_count(cfg, "num_nontarget_trials"),
        cfg.seed(),
    )?;
    write_trials(&run.output("trials")?, &trials)?;
    Ok(())
}

/// Labels of one side, restricted to the configured cohort.
fn labels(run: &mut Run, key: &str) -> CliResult<BTreeMap<String, String>> {
    let cohort = run.cfg.text("cohort").to_string();
    let all = read_labels(&run.input(key))?;
    Ok(match cohort.as_str() {
        "all" => all,
        prefix => all.into_iter().filter(|(_, s)| s.starts_with(prefix)).collect(),
    })
}

fn speech_mask(utt: &FeatureSequence, threshold: f64) -> CliResult<VadMask> {
    if utt.energies.is_none() {
        return Ok(VadMask::all_speech(utt.num_frames()));
    }
    Ok(energy_vad(utt, threshold)?)
}

fn train_ubm(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg;
    let train = labels(run, "labels_train")?;
    let features: Vec<FeatureSequence> = read_feature_archive(&run.input("features_long"))?
        .into_iter()
        .filter(|u| train.contains_key(&u.utterance_id))
        .collect();
    if features.is_empty() {
        return Err(Error::Precondition("no training utterances for the background model".into()).into());
    }
    let gmm = match cfg.text("posterior_source") {
        "senone" => {
            let mut senones = load_posterior_archive(&run.input("senones_long"), None)?;
            senones.entries.retain(|e| train.contains_key(&e.utterance_id));
            gmm_from_posteriors(&features, &senones, false, cfg.float("ubm_floor"))?
        }
        _ => {
            let limit = cfg.int("ubm_frames_per_utterance");
            let threshold = cfg.float("vad_threshold");
            let subset: Vec<FeatureSequence> = features
                .iter()
                .map(|u| {
                    let n = if limit == 0 { u.num_frames() } else { limit.min(u.num_frames()) };
                    let head = u.slice(u.utterance_id.clone(), 0, n);
                    let mask = speech_mask(&head, threshold)?;
                    Ok(head.select(&mask)?)
                })
                .collect::<CliResult<_>>()?;
            let gmm_cfg = GmmConfig {
                components: cfg.int("ubm_components"),
                diag_iters: cfg.int("ubm_diag_iters"),
                full_iters: cfg.int("ubm_full_iters"),
                seed: cfg.seed(),
                floor_scale: cfg.float("ubm_floor"),
                ..GmmConfig::default()
            };
            train_gmm_em(&subset, &gmm_cfg)?.gmm
        }
    };
    gmm.write(&run.output("ubm")?)?;
    Ok(())
}

/// Rows of the parent's posteriors covering each truncated segment.
fn slice_posteriors(
    long: &PosteriorArchive,
    records: &[TruncationRecord],
    source: PosteriorSource,
) -> CliResult<PosteriorArchive> {
    let by_id: HashMap<&str, &PosteriorEntry> = long.entries.iter().map(|e| (e.utterance_id.as_str(), e)).collect();
    let entries = records
        .iter()
        .map(|r| {
            let parent = by_id
                .get(r.parent_id.as_str())
                .ok_or_else(|| Error::Precondition(format!("no posteriors for {}", r.parent_id)))?;
            if r.start_frame + r.num_frames > parent.posteriors.nrows() {
                return Err(Error::Dimension(format!(
                    "segment {} runs past the end of {}",
                    r.segment_id, r.parent_id
                ))
                .into());
            }
            Ok(PosteriorEntry {
                utterance_id: r.segment_id.clone(),
                posteriors: parent.posteriors.rows(r.start_frame, r.num_frames).into_owned(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(PosteriorArchive { source, entries })
}

fn posteriors(run: &mut Run) -> CliResult<()> {
    let ubm = FullGmm::read(&run.input("ubm"))?;
    if run.cfg.text("posterior_source") == "senone" {
        let senones = load_posterior_archive(&run.input("senones_long"), Some(ubm.num_components()))?;
        let records = read_truncation_records(&run.input("truncation"))?;
        let short = slice_posteriors(&senones, &records, PosteriorSource::ExternalSenone)?;
        write_posterior_archive(&run.output("posteriors_long")?, &senones)?;
        write_posterior_archive(&run.output("posteriors_short")?, &short)?;
        return Ok(());
    }
    for (fk, pk) in [("features_long", "posteriors_long"), ("features_short", "posteriors_short")] {
        let features = read_feature_archive(&run.input(fk))?;
        let entries = features
            .par_iter()
            .map(|u| {
                Ok(PosteriorEntry {
                    utterance_id: u.utterance_id.clone(),
                    posteriors: gmm_posteriors(&ubm, u)?,
                })
            })
            .collect::<ivmap_core::Result<Vec<_>>>()?;
        let archive = PosteriorArchive {
            source: PosteriorSource::Gmm,
            entries,
        };
        write_posterior_archive(&run.output(pk)?, &archive)?;
    }
    Ok(())
}

fn stats(run: &mut Run) -> CliResult<()> {
    let ubm = FullGmm::read(&run.input("ubm"))?;
    let threshold = run.cfg.float("vad_threshold");
    for (fk, pk, sk) in [
        ("features_long", "posteriors_long", "stats_long"),
        ("features_short", "posteriors_short", "stats_short"),
    ] {
        let features = read_feature_archive(&run.input(fk))?;
        let archive = load_posterior_archive(&run.input(pk), Some(ubm.num_components()))?;
        let by_id: HashMap<&str, &PosteriorEntry> =
            archive.entries.iter().map(|e| (e.utterance_id.as_str(), e)).collect();
        let out = features
            .par_iter()
            .map(|u| {
                let entry = by_id
                    .get(u.utterance_id.as_str())
                    .ok_or_else(|| Error::Precondition(format!("no posteriors for {}", u.utterance_id)))?;
                let mask = speech_mask(u, threshold)?;
                Ok(center_stats(&accumulate_stats(&entry.posteriors, u, &mask)?, &ubm)?)
            })
            .collect::<CliResult<Vec<SuffStats>>>()?;
        write_stats(&run.output(sk)?, &out)?;
    }
    Ok(())
}

fn train_tv(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg;
    let ubm = FullGmm::read(&run.input("ubm"))?;
    let train = labels(run, "labels_train")?;
    let stats: Vec<SuffStats> = read_stats(&run.input("stats_long"))?
        .into_iter()
        .filter(|s| train.contains_key(&s.utterance_id))
        .collect();
    let tv_cfg = TvConfig {
        rank: cfg.int("tv_rank"),
        iters: cfg.int("tv_iters"),
        seed: cfg.seed(),
        init_scale: cfg.float("tv_init_scale"),
    };
    train_tv_em(&stats, &ubm, &tv_cfg)?.model.write(&run.output("tv")?)?;
    Ok(())
}

fn extract(run: &mut Run) -> CliResult<()> {
    let tv = TotalVariabilityModel::read(&run.input("tv"))?;
    let extractor = tv.extractor()?;
    for (sk, ik) in [("stats_long", "ivectors_long"), ("stats_short", "ivectors_short")] {
        let stats = read_stats(&run.input(sk))?;
        let ivectors = stats
            .par_iter()
            .map(|s| extractor.extract(s))
            .collect::<ivmap_core::Result<Vec<_>>>()?;
        write_ivectors(&run.output(ik)?, &ivectors)?;
    }
    Ok(())
}

/// Back-end training vectors with their speakers.
fn backend_training_set(run: &mut Run) -> CliResult<(Vec<IVector>, Vec<String>)> {
    let train = labels(run, "labels_train")?;
    let key = match run.cfg.parsed::<PldaTrainSet>("plda_train_set") {
        PldaTrainSet::Long => "ivectors_long",
        PldaTrainSet::Short => "ivectors_short",
    };
    let vectors: Vec<IVector> = read_ivectors(&run.input(key))?
        .into_iter()
        .filter(|v| train.contains_key(&v.utterance_id))
        .collect();
    let speakers = vectors.iter().map(|v| train[&v.utterance_id].clone()).collect();
    Ok((vectors, speakers))
}

fn train_lda(run: &mut Run) -> CliResult<()> {
    let (vectors, speakers) = backend_training_set(run)?;
    let prep = fit_preprocessor(&vectors, &speakers, run.cfg.int("lda_dim").max(1))?;
    let lda = prep.lda.expect("projection requested");
    let columns: Vec<IVector> = lda
        .column_iter()
        .enumerate()
        .map(|(k, c)| IVector::new(format!("lda{k:04}"), c.into_owned()))
        .collect();
    write_ivectors(&run.output("lda_model")?, &columns)?;
    Ok(())
}

fn train_plda(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg;
    let (vectors, speakers) = backend_training_set(run)?;
    let mut prep = fit_preprocessor(&vectors, &speakers, 0)?;
    if cfg.flag("lda") {
        let columns = read_ivectors(&run.input("lda_model"))?;
        if columns.is_empty() || columns[0].dim() != prep.input_dim() {
            return Err(Error::Dimension(format!(
                "LDA model does not project {}-dimensional i-vectors",
                prep.input_dim()
            ))
            .into());
        }
        let means: Vec<_> = columns.into_iter().map(|c| c.mean).collect();
        prep.lda = Some(DMatrix::from_columns(&means));
    }
    let plda_cfg = PldaConfig {
        rank: cfg.int("plda_rank"),
        iters: cfg.int("plda_iters"),
        seed: cfg.seed(),
    };
    train_plda_backend(&vectors, &speakers, prep, &plda_cfg)?.write(&run.output("plda")?)?;
    Ok(())
}

/// Phoneme vectors of every truncated segment, keyed by segment id.
fn phoneme_vectors(run: &mut Run) -> CliResult<HashMap<String, PhonemeVector>> {
    let scale = run.cfg.float("phoneme_scale");
    let threshold = run.cfg.float("vad_threshold");
    let senones = load_posterior_archive(&run.input("senones_long"), None)?;
    let records = read_truncation_records(&run.input("truncation"))?;
    let short = slice_posteriors(&senones, &records, PosteriorSource::ExternalSenone)?;
    let features = read_feature_archive(&run.input("features_short"))?;
    let by_id: HashMap<&str, &FeatureSequence> = features.iter().map(|u| (u.utterance_id.as_str(), u)).collect();
    short
        .entries
        .par_iter()
        .map(|e| {
            let mask = match by_id.get(e.utterance_id.as_str()) {
                Some(u) => speech_mask(u, threshold)?,
                None => VadMask::all_speech(e.posteriors.nrows()),
            };
            Ok((e.utterance_id.clone(), build_phoneme_vector(&e.posteriors, &mask, scale)?))
        })
        .collect()
}

/// Long and short i-vectors of the speakers in `labels`, short segments
/// linked to their parents.
fn build_split(
    long: &[IVector],
    short: &[IVector],
    labels: &BTreeMap<String, String>,
    phonemes: Option<&HashMap<String, PhonemeVector>>,
) -> CliResult<Split> {
    let mut split = Split::default();
    let mut local: HashMap<&str, usize> = HashMap::new();
    for v in long {
        if let Some(spk) = labels.get(&v.utterance_id) {
            local.insert(v.utterance_id.as_str(), split.long.len());
            split.long.push(v.clone());
            split.long_speakers.push(spk.clone());
        }
    }
    for v in short {
        let Some(spk) = labels.get(&v.utterance_id) else { continue };
        let parent = parent_id(&v.utterance_id)
            .and_then(|p| local.get(p))
            .ok_or_else(|| Error::Precondition(format!("short utterance {} has no long parent", v.utterance_id)))?;
        if let Some(ph) = phonemes {
            let p = ph
                .get(&v.utterance_id)
                .ok_or_else(|| Error::Precondition(format!("no phoneme vector for {}", v.utterance_id)))?;
            split.short_phonemes.push(p.clone());
        }
        split.short.push(v.clone());
        split.short_speakers.push(spk.clone());
        split.short_parent.push(*parent);
    }
    Ok(split)
}

fn load_splits(run: &mut Run, with_phonemes: bool) -> CliResult<(Split, Split)> {
    let train = labels(run, "labels_train")?;
    let eval = labels(run, "labels_eval")?;
    let long = read_ivectors(&run.input("ivectors_long"))?;
    let short = read_ivectors(&run.input("ivectors_short"))?;
    let phonemes = if with_phonemes { Some(phoneme_vectors(run)?) } else { None };
    Ok((
        build_split(&long, &short, &train, phonemes.as_ref())?,
        build_split(&long, &short, &eval, phonemes.as_ref())?,
    ))
}

fn mapper_spec(cfg: &ExperimentConfig) -> MapperSpec {
    MapperSpec {
        method: cfg.parsed("method"),
        config: MapperConfig {
            hidden: cfg.int("hidden"),
            bottleneck: cfg.int("bottleneck"),
            depth: cfg.parsed("depth"),
            batch_size: cfg.int("batch_size"),
            learning_rate: cfg.float("learning_rate"),
            lr_decay: cfg.float("lr_decay"),
            decay_steps: cfg.int("decay_steps"),
            input_norm: cfg.flag("input_norm"),
            ..MapperConfig::default()
        },
        alpha: cfg.float("alpha"),
        iters: cfg.int("iters"),
        pretrain_iters: cfg.int("pretrain_iters"),
        use_phonemes: cfg.flag("phoneme"),
        seed: cfg.seed(),
    }
}

fn train_mapper_cmd(run: &mut Run) -> CliResult<()> {
    let spec = mapper_spec(run.cfg);
    let (train, _) = load_splits(run, spec.use_phonemes)?;
    let training = train_mapper(&train.pairs(spec.use_phonemes)?, &spec)?;
    training.net.write(&run.output("mapper")?)?;
    training.write_curve(&run.output("training_curve")?)?;
    Ok(())
}

fn map(run: &mut Run) -> CliResult<()> {
    let net = MapperNetwork::read(&run.input("mapper"))?;
    let short = read_ivectors(&run.input("ivectors_short"))?;
    let mut split = Split {
        short,
        ..Split::default()
    };
    if net.phoneme_dim > 0 {
        let phonemes = phoneme_vectors(run)?;
        split.short_phonemes = split
            .short
            .iter()
            .map(|v| {
                phonemes
                    .get(&v.utterance_id)
                    .cloned()
                    .ok_or_else(|| Error::Precondition(format!("no phoneme vector for {}", v.utterance_id)).into())
            })
            .collect::<CliResult<_>>()?;
    }
    write_ivectors(&run.output("ivectors_mapped")?, &map_split(&net, &split)?)?;
    Ok(())
}

fn score(run: &mut Run) -> CliResult<()> {
    let plda = PldaModel::read(&run.input("plda"))?;
    let trials = read_trials(&run.input("trials"))?;
    let vectors = read_ivectors(&run.input("score_ivectors"))?;
    let scored = score_trials(&plda, &trials, &vectors)?;
    let lines: Vec<ScoreLine> = trials
        .trials
        .iter()
        .zip(&scored.scores)
        .map(|(t, &score)| ScoreLine {
            enroll: t.enroll.clone(),
            test: t.test.clone(),
            score,
        })
        .collect();
    write_scores(&run.output("scores")?, &lines)?;
    Ok(())
}

/// Attach trial labels to a score file.
fn label_scores(trials: &TrialSet, scores: &[ScoreLine]) -> CliResult<ScoredTrials> {
    let keys: HashMap<(&str, &str), bool> = trials
        .trials
        .iter()
        .map(|t| ((t.enroll.as_str(), t.test.as_str()), t.target))
        .collect();
    let mut values = Vec::with_capacity(scores.len());
    let mut targets = Vec::with_capacity(scores.len());
    for s in scores {
        let target = keys
            .get(&(s.enroll.as_str(), s.test.as_str()))
            .ok_or_else(|| Error::Precondition(format!("score for unknown trial {} {}", s.enroll, s.test)))?;
        values.push(s.score);
        targets.push(*target);
    }
    Ok(ScoredTrials::new(values, targets)?)
}

fn evaluate(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg;
    let trials = read_trials(&run.input("trials"))?;
    let scores = read_scores(&run.input("scores"))?;
    let scored = label_scores(&trials, &scores)?;
    let custom = DcfParams::new(cfg.float("dcf_c_miss"), cfg.float("dcf_c_fa"), cfg.float("dcf_p_target"))?;
    let mut metrics = vec![
        ("eer".to_string(), compute_eer(&scored)?),
        ("dcf08".to_string(), compute_min_dcf(&scored, &DcfParams::SRE08)?),
        ("dcf10".to_string(), compute_min_dcf(&scored, &DcfParams::SRE10)?),
        ("min_dcf".to_string(), compute_min_dcf(&scored, &custom)?),
    ];

    let plda = PldaModel::read(&run.input("plda"))?;
    let eval = labels(run, "labels_eval")?;
    let long = read_ivectors(&run.input("ivectors_long"))?;
    let scored_vectors = read_ivectors(&run.input("score_ivectors"))?;
    let split = build_split(&long, &scored_vectors, &eval, None)?;
    let means: Vec<_> = split.short.iter().map(|v| v.mean.clone()).collect();
    metrics.push(("d_sl".to_string(), d_sl(&means, &split.parents())?));
    metrics.push((
        "j_ratio".to_string(),
        backend_j_ratio(&plda, &split.short, &split.short_speakers)?,
    ));

    write_metrics_csv(&run.output("metrics")?, &metrics)?;
    let text_path = run.output("metrics_text")?;
    let mut text = Vec::new();
    write_metrics_text(&mut text, &metrics).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(&text_path, text).map_err(|e| CliError::Io(format!("{}: {e}", text_path.display())))?;
    write_det_csv(&run.output("det")?, &det_points(&scored)?)?;
    Ok(())
}

enum Sweep {
    Alpha,
    Depth,
}

/// Retrain the mapper for each value, map the evaluation segments and score
/// them with the trained back end, exactly as train-mapper, map, score and
/// evaluate would.
fn sweep(run: &mut Run, kind: Sweep) -> CliResult<()> {
    let cfg = run.cfg;
    let base = mapper_spec(cfg);
    let (train, eval) = load_splits(run, base.use_phonemes)?;
    let back = BackEnd {
        plda: PldaModel::read(&run.input("plda"))?,
        trials: read_trials(&run.input("trials"))?,
    };
    let pairs = train.pairs(base.use_phonemes)?;
    let (header, specs): (&str, Vec<(String, MapperSpec)>) = match kind {
        Sweep::Alpha => (
            "alpha",
            cfg.floats("alpha_list")
                .into_iter()
                .map(|a| (a.to_string(), MapperSpec { alpha: a, ..base.clone() }))
                .collect(),
        ),
        Sweep::Depth => (
            "depth",
            cfg.words("depth_list")
                .into_iter()
                .map(|d| {
                    let mut s = base.clone();
                    s.config.depth = d.parse().expect("validated depth");
                    (d.to_string(), s)
                })
                .collect(),
        ),
    };
    if specs.is_empty() {
        return Err(CliError::Config(vec![format!("{header}_list: empty sweep")]));
    }
    let mut out = format!("{header},eer,d_sl\n");
    for (label, spec) in specs {
        log::info!("sweep {header}={label}");
        let net = train_mapper(&pairs, &spec)?.net;
        let m = evaluate_arm(&eval, &back, &map_split(&net, &eval)?)?;
        let _ = writeln!(out, "{label},{:.16e},{:.16e}", m.eer, m.d_sl);
    }
    let key = match kind {
        Sweep::Alpha => "sweep_alpha_out",
        Sweep::Depth => "sweep_depth_out",
    };
    let path = run.output(key)?;
    std::fs::write(&path, out).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}
