//! `key = value` experiment configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Path,
    Choice(&'static [&'static str]),
    FloatList,
    ChoiceList(&'static [&'static str]),
}

struct KeySpec {
    name: &'static str,
    kind: Kind,
    default: Option<&'static str>,
}

const fn key(name: &'static str, kind: Kind, default: &'static str) -> KeySpec {
    KeySpec {
        name,
        kind,
        default: Some(default),
    }
}

const WINDOWS: &[&str] = &["5", "10", "mixed"];
const DEPTHS: &[&str] = &["shallow", "deep"];
const METHODS: &[&str] = &["dnn1", "dnn2"];
const LENGTHS: &[&str] = &["long", "short"];
const SOURCES: &[&str] = &["ubm", "senone"];
const COHORTS: &[&str] = &["all", "f", "m"];

const KEYS: &[KeySpec] = &[
    KeySpec {
        name: "seed",
        kind: Kind::Int,
        default: None,
    },
    key("work_dir", Kind::Path, "."),
    key("manifest_dir", Kind::Path, "manifests"),
    key("cohort", Kind::Choice(COHORTS), "all"),
    // synthetic corpus
    key("num_speakers", Kind::Int, "560"),
    key("eval_speakers", Kind::Int, "60"),
    key("utterances_per_speaker", Kind::Int, "2"),
    key("long_frames", Kind::Int, "3000"),
    key("frame_rate", Kind::Int, "100"),
    key("corpus_components", Kind::Int, "32"),
    key("feat_dim", Kind::Int, "10"),
    key("true_rank", Kind::Int, "64"),
    key("speaker_rank", Kind::Int, "0"),
    key("speaker_scale", Kind::Float, "1.0"),
    key("channel_scale", Kind::Float, "0.5"),
    key("run_frames", Kind::Int, "2"),
    key("content_rank", Kind::Int, "4"),
    key("content_block_frames", Kind::Int, "500"),
    key("content_scale", Kind::Float, "1.0"),
    key("content_phonetic_scale", Kind::Float, "2.0"),
    key("offset_scale", Kind::Float, "0.5"),
    key("mean_spread", Kind::Float, "3.0"),
    key("window", Kind::Choice(WINDOWS), "5"),
    key("num_target_trials", Kind::Int, "3000"),
    key("num_nontarget_trials", Kind::Int, "30000"),
    // background model and front end
    key("ubm_components", Kind::Int, "32"),
    key("ubm_diag_iters", Kind::Int, "3"),
    key("ubm_full_iters", Kind::Int, "3"),
    key("ubm_floor", Kind::Float, "1e-4"),
    key("ubm_frames_per_utterance", Kind::Int, "500"),
    key("posterior_source", Kind::Choice(SOURCES), "ubm"),
    key("vad_threshold", Kind::Float, "0.5"),
    key("tv_rank", Kind::Int, "64"),
    key("tv_iters", Kind::Int, "5"),
    key("tv_init_scale", Kind::Float, "0.1"),
    // back end
    key("lda", Kind::Bool, "off"),
    key("lda_dim", Kind::Int, "32"),
    key("plda_rank", Kind::Int, "32"),
    key("plda_iters", Kind::Int, "10"),
    key("plda_train_set", Kind::Choice(LENGTHS), "long"),
    // mapper
    key("method", Kind::Choice(METHODS), "dnn2"),
    key("alpha", Kind::Float, "0.8"),
    key("depth", Kind::Choice(DEPTHS), "shallow"),
    key("hidden", Kind::Int, "128"),
    key("bottleneck", Kind::Int, "64"),
    key("batch_size", Kind::Int, "256"),
    key("learning_rate", Kind::Float, "1e-3"),
    key("lr_decay", Kind::Float, "0.95"),
    key("decay_steps", Kind::Int, "1000"),
    key("input_norm", Kind::Bool, "on"),
    key("iters", Kind::Int, "3000"),
    key("pretrain_iters", Kind::Int, "2500"),
    key("phoneme", Kind::Bool, "off"),
    key("phoneme_scale", Kind::Float, "500"),
    // evaluation
    key("dcf_c_miss", Kind::Float, "10"),
    key("dcf_c_fa", Kind::Float, "1"),
    key("dcf_p_target", Kind::Float, "0.01"),
    key("alpha_list", Kind::FloatList, "0.1,0.2,0.5,0.8,0.9"),
    key("depth_list", Kind::ChoiceList(DEPTHS), "shallow,deep"),
    // artifacts
    key("features_long", Kind::Path, "long.fea"),
    key("features_short", Kind::Path, "short.fea"),
    key("senones_long", Kind::Path, "long.senone.pos"),
    key("labels_train", Kind::Path, "train.labels"),
    key("labels_eval", Kind::Path, "eval.labels"),
    key("truncation", Kind::Path, "truncation.csv"),
    key("truth", Kind::Path, "truth.gt"),
    key("trials", Kind::Path, "eval.trials"),
    key("ubm", Kind::Path, "ubm.gmm"),
    key("posteriors_long", Kind::Path, "long.pos"),
    key("posteriors_short", Kind::Path, "short.pos"),
    key("stats_long", Kind::Path, "long.sta"),
    key("stats_short", Kind::Path, "short.sta"),
    key("tv", Kind::Path, "tv.tvm"),
    key("ivectors_long", Kind::Path, "long.ivx"),
    key("ivectors_short", Kind::Path, "short.ivx"),
    key("lda_model", Kind::Path, "lda.ivx"),
    key("plda", Kind::Path, "plda.pld"),
    key("mapper", Kind::Path, "mapper.net"),
    key("training_curve", Kind::Path, "training_curve.csv"),
    key("ivectors_mapped", Kind::Path, "mapped.ivx"),
    key("score_ivectors", Kind::Path, "mapped.ivx"),
    key("scores", Kind::Path, "scores.txt"),
    key("metrics", Kind::Path, "metrics.csv"),
    key("metrics_text", Kind::Path, "metrics.txt"),
    key("det", Kind::Path, "det.csv"),
    key("sweep_alpha_out", Kind::Path, "sweep_alpha.csv"),
    key("sweep_depth_out", Kind::Path, "sweep_depth.csv"),
];

fn spec_of(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

fn check_value(kind: Kind, value: &str) -> std::result::Result<(), String> {
    let choice = |opts: &[&str], v: &str| {
        if opts.contains(&v) {
            Ok(())
        } else {
            Err(format!("expected one of {}", opts.join("|")))
        }
    };
    match kind {
        Kind::Int => u64::from_str(value).map(|_| ()).map_err(|_| "expected a non-negative integer".into()),
        Kind::Float => match f64::from_str(value) {
            Ok(x) if x.is_finite() => Ok(()),
            _ => Err("expected a finite number".into()),
        },
        Kind::Bool => parse_bool(value).map(|_| ()).ok_or_else(|| "expected on|off".into()),
        Kind::Path => {
            if value.is_empty() {
                Err("expected a non-empty value".into())
            } else {
                Ok(())
            }
        }
        Kind::Choice(opts) => choice(opts, value),
        Kind::FloatList => {
            let items = split_list(value);
            if items.is_empty() {
                return Err("expected a non-empty comma-separated list".into());
            }
            for it in items {
                match f64::from_str(it) {
                    Ok(x) if x.is_finite() => {}
                    _ => return Err(format!("{it:?} is not a finite number")),
                }
            }
            Ok(())
        }
        Kind::ChoiceList(opts) => {
            let items = split_list(value);
            if items.is_empty() {
                return Err("expected a non-empty comma-separated list".into());
            }
            items.into_iter().try_for_each(|it| choice(opts, it))
        }
    }
}

fn split_list(value: &str) -> Vec<&str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

/// Normalise `--some-key` / `some-key` to `some_key`.
fn normalise_key(raw: &str) -> String {
    raw.trim_start_matches("--").replace('-', "_")
}

/// Validated configuration: every known key has a value, paths are anchored
/// at the config file's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parse config text plus `--key value` overrides. Every problem is
    /// collected before failing.
    pub fn parse(text: &str, base_dir: &Path, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut problems = Vec::new();
        let mut given: BTreeMap<String, String> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    given.insert(normalise_key(k.trim()), v.trim().to_string());
                }
                None => problems.push(format!("line {}: expected key = value", n + 1)),
            }
        }
        for (k, v) in overrides {
            given.insert(normalise_key(k), v.clone());
        }
        let mut values = BTreeMap::new();
        for (k, v) in &given {
            match spec_of(k) {
                None => problems.push(format!("{k}: unknown key")),
                Some(spec) => match check_value(spec.kind, v) {
                    Ok(()) => {
                        values.insert(k.clone(), v.clone());
                    }
                    Err(e) => problems.push(format!("{k}: {e} (got {v:?})")),
                },
            }
        }
        for spec in KEYS {
            if values.contains_key(spec.name) || given.contains_key(spec.name) {
                continue;
            }
            match spec.default {
                Some(d) => {
                    values.insert(spec.name.to_string(), d.to_string());
                }
                None => problems.push(format!("{}: required key missing", spec.name)),
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
        Ok(Self {
            values,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Self::parse(&text, &base, overrides)
    }

    fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("configuration key {name} is not declared"))
    }

    pub fn int(&self, name: &str) -> usize {
        self.raw(name).parse().expect("validated integer")
    }

    pub fn uint(&self, name: &str) -> u64 {
        self.raw(name).parse().expect("validated integer")
    }

    pub fn float(&self, name: &str) -> f64 {
        self.raw(name).parse().expect("validated number")
    }

    pub fn flag(&self, name: &str) -> bool {
        parse_bool(self.raw(name)).expect("validated flag")
    }

    pub fn text(&self, name: &str) -> &str {
        self.raw(name)
    }

    pub fn floats(&self, name: &str) -> Vec<f64> {
        split_list(self.raw(name)).into_iter().map(|s| s.parse().expect("validated number")).collect()
    }

    pub fn words(&self, name: &str) -> Vec<&str> {
        split_list(self.raw(name))
    }

    pub fn parsed<T: FromStr>(&self, name: &str) -> T
    where
        T::Err: std::fmt::Debug,
    {
        self.raw(name).parse().expect("validated choice")
    }

    pub fn seed(&self) -> u64 {
        self.uint("seed")
    }

    /// Artifact path: relative values are taken from `work_dir`, which is
    /// itself relative to the config file.
    pub fn path(&self, name: &str) -> PathBuf {
        let p = PathBuf::from(self.raw(name));
        if p.is_absolute() {
            return p;
        }
        if name == "work_dir" {
            return self.base_dir.join(p);
        }
        self.path("work_dir").join(p)
    }

    /// All resolved values, for manifests.
    pub fn snapshot(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// Split `--key value` pairs from the command line.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut problems = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if let Some(k) = a.strip_prefix("--") {
            if let Some((k, v)) = k.split_once('=') {
                out.push((k.to_string(), v.to_string()));
                continue;
            }
            match it.next() {
                Some(v) => out.push((k.to_string(), v.clone())),
                None => problems.push(format!("{k}: override has no value")),
            }
        } else {
            problems.push(format!("{a}: expected --key value"));
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Config(problems))
    }
}
