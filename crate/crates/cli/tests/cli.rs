use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PIPELINE: &[&str] = &[
    "synth-corpus",
    "train-ubm",
    "posteriors",
    "stats",
    "train-tv",
    "extract",
    "train-lda",
    "train-plda",
    "train-mapper",
    "map",
    "score",
    "evaluate",
    "sweep-alpha",
    "sweep-depth",
];

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf")
}

fn ivmap(sub: &str, config: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivmap"))
        .arg(sub)
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .expect("spawn ivmap")
}

fn run_ok(sub: &str, config: &Path, extra: &[&str]) {
    let out = ivmap(sub, config, extra);
    assert!(
        out.status.success(),
        "{sub} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(work: &Path, extra: &[&str]) {
    let work = work.to_str().unwrap();
    let mut args = vec!["--work_dir", work];
    args.extend_from_slice(extra);
    for sub in PIPELINE {
        run_ok(sub, &smoke_config(), &args);
    }
}

fn artifacts(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(artifacts(&p));
        } else {
            out.insert(p.clone(), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn without_wall_clock(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter(|l| !l.contains("wall_clock_seconds"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn smoke_pipeline_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), &[]);
    let first = artifacts(dir.path());

    let metrics = String::from_utf8(first[&dir.path().join("metrics.csv")].clone()).unwrap();
    let keys: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for k in ["eer", "dcf08", "dcf10", "d_sl", "j_ratio"] {
        assert!(keys.contains(&k), "metrics.csv lacks {k}: {metrics}");
    }
    for sub in PIPELINE {
        assert!(dir.path().join("manifests").join(format!("{sub}.json")).exists());
    }
    let sweep = String::from_utf8(first[&dir.path().join("sweep_alpha.csv")].clone()).unwrap();
    assert_eq!(sweep.lines().count(), 3, "{sweep}");

    run_pipeline(dir.path(), &[]);
    let second = artifacts(dir.path());
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (path, bytes) in &first {
        if path.extension().is_some_and(|e| e == "json") {
            assert_eq!(without_wall_clock(bytes), without_wall_clock(&second[path]), "{}", path.display());
        } else {
            assert!(bytes == &second[path], "{} differs between runs", path.display());
        }
    }
}

#[test]
fn sweep_row_matches_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), &["--alpha_list", "0.8"]);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let value = |k: &str| {
        metrics
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{k},")))
            .unwrap()
            .to_string()
    };
    let sweep = std::fs::read_to_string(dir.path().join("sweep_alpha.csv")).unwrap();
    let row: Vec<&str> = sweep.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row, vec!["0.8", value("eer").as_str(), value("d_sl").as_str()]);
}

#[test]
fn evaluate_with_one_trial_class_reports_metric_one_class() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.trials"), "a\tb\ttarget\nc\td\ttarget\n").unwrap();
    std::fs::write(dir.path().join("s.scores"), "a\tb\t1.0\nc\td\t2.0\n").unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "seed = 1\ntrials = t.trials\nscores = s.scores\n").unwrap();
    let out = ivmap("evaluate", &cfg, &[]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[METRIC_ONE_CLASS]"), "{err}");
}

#[test]
fn config_errors_name_every_bad_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "alpha = 2x\nunknown_knob = 1\n").unwrap();
    let out = ivmap("train-ubm", &cfg, &["--depth", "medium"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[CONFIG_INVALID]"), "{err}");
    for key in ["alpha", "unknown_knob", "depth", "seed"] {
        assert!(err.contains(key), "{key} missing from {err}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ok.conf");
    std::fs::write(&cfg, "seed = 3\n").unwrap();
    let out = ivmap("train-everything", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[USAGE]"));
}

#[test]
fn matched_length_plda_and_senone_background_run() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(
        dir.path(),
        &["--plda_train_set", "short", "--posterior_source", "senone", "--lda", "on", "--phoneme", "on"],
    );
    assert!(dir.path().join("metrics.csv").exists());
}
