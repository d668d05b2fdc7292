use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mapper::{PhonemeVector, TrainingPair};
use crate::plda::{Trial, TrialSet};
use crate::tv::IVector;
use crate::{Error, Result};

/// Parent utterance of a truncated segment id (`{parent}-segNNN`).
pub fn parent_id(id: &str) -> Option<&str> {
    let (parent, idx) = id.rsplit_once("-seg")?;
    (!idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit())).then_some(parent)
}

/// One pair per short i-vector, matched to its parent's long i-vector.
/// `phonemes`, when given, runs parallel to `short`.
pub fn build_pairs(
    short: &[IVector],
    long: &[IVector],
    phonemes: Option<&[PhonemeVector]>,
) -> Result<Vec<TrainingPair>> {
    if let Some(p) = phonemes {
        if p.len() != short.len() {
            return Err(Error::Dimension(format!(
                "{} phoneme vectors for {} short i-vectors",
                p.len(),
                short.len()
            )));
        }
    }
    let by_id: HashMap<&str, &IVector> = long.iter().map(|iv| (iv.utterance_id.as_str(), iv)).collect();
    short
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let parent = parent_id(&s.utterance_id)
                .and_then(|p| by_id.get(p))
                .ok_or_else(|| {
                    Error::Precondition(format!("short utterance {} has no long parent", s.utterance_id))
                })?;
            TrainingPair::new(
                s.utterance_id.clone(),
                s.mean.clone(),
                parent.mean.clone(),
                phonemes.map(|p| p[i].values.clone()),
            )
        })
        .collect()
}

/// Sample target and nontarget trials without replacement. Pairs of
/// segments cut from the same parent are never used. `None` takes every
/// available trial of that kind.
pub fn build_trials(
    ids: &[String],
    speakers: &[String],
    num_target: Option<usize>,
    num_nontarget: Option<usize>,
    seed: u64,
) -> Result<TrialSet> {
    if ids.len() != speakers.len() {
        return Err(Error::Dimension(format!("{} ids but {} labels", ids.len(), speakers.len())));
    }
    let distinct: std::collections::BTreeSet<&String> = speakers.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::Precondition("trials need at least two speakers".into()));
    }
    let source = |id: &str| parent_id(id).unwrap_or(id).to_string();
    let sources: Vec<String> = ids.iter().map(|i| source(i)).collect();
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            if sources[i] == sources[j] {
                continue;
            }
            if speakers[i] == speakers[j] {
                targets.push((i, j));
            } else {
                nontargets.push((i, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |pool: &[(usize, usize)], want: Option<usize>, kind: &str| -> Result<Vec<(usize, usize)>> {
        let n = want.unwrap_or(pool.len());
        if n > pool.len() {
            return Err(Error::Precondition(format!(
                "requested {n} {kind} trials but only {} are available",
                pool.len()
            )));
        }
        let mut idx = sample(&mut rng, pool.len(), n).into_vec();
        idx.sort_unstable();
        Ok(idx.into_iter().map(|k| pool[k]).collect())
    };
    let chosen_t = pick(&targets, num_target, "target")?;
    let chosen_n = pick(&nontargets, num_nontarget, "nontarget")?;
    if chosen_t.is_empty() {
        log::warn!("trial list has no target trials; EER and minDCF will be undefined");
    }
    let trials = chosen_t
        .into_iter()
        .map(|p| (p, true))
        .chain(chosen_n.into_iter().map(|p| (p, false)))
        .map(|((i, j), target)| Trial {
            enroll: ids[i].clone(),
            test: ids[j].clone(),
            target,
        })
        .collect();
    Ok(TrialSet { trials })
}

/// `utterance_id<TAB>speaker_id` lines.
pub fn write_labels(path: &Path, ids: &[String], speakers: &[String]) -> Result<()> {
    let mut out = String::new();
    for (i, s) in ids.iter().zip(speakers) {
        let _ = writeln!(out, "{i}\t{s}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, spk) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("{}:{}: expected id<TAB>speaker", path.display(), n + 1)))?;
        map.insert(id.to_string(), spk.to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::*;

    fn iv(id: &str, x: f64) -> IVector {
        IVector::new(id, DVector::from_element(2, x))
    }

    #[test]
    fn parent_resolution() {
        assert_eq!(parent_id("f0001-u00-seg003"), Some("f0001-u00"));
        assert_eq!(parent_id("f0001-u00"), None);
        assert_eq!(parent_id("x-segabc"), None);
    }

    #[test]
    fn pairs_share_parent_vector() {
        let long = vec![iv("a", 1.0), iv("b", 2.0)];
        let short = vec![iv("a-seg000", 0.1), iv("a-seg001", 0.2), iv("a-seg002", 0.3), iv("b-seg000", 0.4)];
        let pairs = build_pairs(&short, &long, None).unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(pairs[..3].iter().all(|p| p.long == long[0].mean));
        assert_eq!(pairs[3].long, long[1].mean);
        let err = build_pairs(&[iv("zz-seg000", 0.0)], &long, None).unwrap_err();
        assert!(err.to_string().contains("zz-seg000"));
    }

    #[test]
    fn trials_are_labelled_consistently_and_reproducible() {
        let ids: Vec<String> = (0..12).map(|i| format!("u{i}")).collect();
        let spk: Vec<String> = (0..12).map(|i| format!("s{}", i % 3)).collect();
        let a = build_trials(&ids, &spk, Some(10), Some(20), 4).unwrap();
        let b = build_trials(&ids, &spk, Some(10), Some(20), 4).unwrap();
        assert_eq!(a.trials, b.trials);
        let lookup: HashMap<_, _> = ids.iter().zip(&spk).collect();
        for t in &a.trials {
            assert_ne!(t.enroll, t.test);
            assert_eq!(lookup[&t.enroll] == lookup[&t.test], t.target);
        }
        assert_eq!(a.num_targets(), 10);
        assert!(build_trials(&ids, &spk, Some(1000), Some(1), 0).is_err());
        let none = build_trials(&ids, &spk, Some(0), Some(3), 0).unwrap();
        assert_eq!(none.num_targets(), 0);
    }

    #[test]
    fn same_parent_segments_are_never_paired() {
        let ids: Vec<String> = vec!["a-seg000".into(), "a-seg001".into(), "b-seg000".into(), "c-seg000".into()];
        let spk: Vec<String> = vec!["s".into(), "s".into(), "s".into(), "t".into()];
        let all = build_trials(&ids, &spk, None, None, 0).unwrap();
        assert!(all.trials.iter().all(|t| parent_id(&t.enroll) != parent_id(&t.test)));
        assert_eq!(all.num_targets(), 2);
    }
}
