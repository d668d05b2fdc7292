//! Trial lists (`enroll<TAB>test<TAB>target|nontarget`) and score files
//! (`enroll<TAB>test<TAB>score`, 17 significant digits).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::binio;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub target: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn num_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    pub fn num_nontargets(&self) -> usize {
        self.trials.len() - self.num_targets()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreLine {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn fields<'a>(line: &'a str, lineno: usize, path: &Path) -> Result<[&'a str; 3]> {
    let parts: Vec<&str> = line.split('\t').collect();
    match parts.as_slice() {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Format(format!(
            "{}:{}: expected three tab-separated fields",
            path.display(),
            lineno + 1
        ))),
    }
}

pub fn read_trials(path: &Path) -> Result<TrialSet> {
    let text = read_text(path)?;
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let [enroll, test, label] = fields(line, i, path)?;
        let target = match label {
            "target" => true,
            "nontarget" => false,
            other => {
                return Err(Error::Format(format!(
                    "{}:{}: unknown trial label {other:?}",
                    path.display(),
                    i + 1
                )))
            }
        };
        trials.push(Trial {
            enroll: enroll.to_string(),
            test: test.to_string(),
            target,
        });
    }
    Ok(TrialSet { trials })
}

pub fn write_trials(path: &Path, set: &TrialSet) -> Result<()> {
    let mut w = binio::create(path)?;
    for t in &set.trials {
        let label = if t.target { "target" } else { "nontarget" };
        writeln!(w, "{}\t{}\t{label}", t.enroll, t.test).map_err(|e| Error::io(path, e))?;
    }
    binio::flush(w, path)
}

pub fn write_scores(path: &Path, scores: &[ScoreLine]) -> Result<()> {
    let mut w = binio::create(path)?;
    for s in scores {
        writeln!(w, "{}\t{}\t{:.16e}", s.enroll, s.test, s.score).map_err(|e| Error::io(path, e))?;
    }
    binio::flush(w, path)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreLine>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let [enroll, test, score] = fields(line, i, path)?;
        let score: f64 = score.parse().map_err(|_| {
            Error::Format(format!("{}:{}: bad score {score:?}", path.display(), i + 1))
        })?;
        out.push(ScoreLine {
            enroll: enroll.to_string(),
            test: test.to_string(),
            score,
        });
    }
    Ok(out)
}
