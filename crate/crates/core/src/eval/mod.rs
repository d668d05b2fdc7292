//! Verification metrics and i-vector diagnostics.

mod diagnostics;
mod report;

pub use diagnostics::{d_sl, j_ratio, mean_variance};
pub use report::{write_det_csv, write_metrics_csv, write_metrics_text};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl DcfParams {
    pub const SRE08: DcfParams = DcfParams {
        c_miss: 10.0,
        c_fa: 1.0,
        p_target: 0.01,
    };
    pub const SRE10: DcfParams = DcfParams {
        c_miss: 1.0,
        c_fa: 1.0,
        p_target: 0.001,
    };

    pub fn new(c_miss: f64, c_fa: f64, p_target: f64) -> Result<Self> {
        if !(c_miss > 0.0 && c_fa > 0.0 && p_target > 0.0 && p_target < 1.0) {
            return Err(Error::Precondition(format!(
                "invalid DCF parameters c_miss={c_miss} c_fa={c_fa} p_target={p_target}"
            )));
        }
        Ok(Self {
            c_miss,
            c_fa,
            p_target,
        })
    }
}

/// Scores with their target/nontarget labels.
#[derive(Clone, Debug, Default)]
pub struct ScoredTrials {
    pub scores: Vec<f64>,
    pub targets: Vec<bool>,
}

impl ScoredTrials {
    pub fn new(scores: Vec<f64>, targets: Vec<bool>) -> Result<Self> {
        if scores.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} scores but {} labels",
                scores.len(),
                targets.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score of trial {i}")));
        }
        Ok(Self { scores, targets })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn num_targets(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }

    /// Operating points from the lowest threshold (accept everything) to the
    /// highest (reject everything), one per distinct score plus one.
    fn sweep(&self) -> Result<Vec<(f64, f64)>> {
        let n_tar = self.num_targets();
        let n_non = self.len() - n_tar;
        if n_tar == 0 || n_non == 0 {
            return Err(Error::OneClass);
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]).then(a.cmp(&b)));
        let (nt, nn) = (n_tar as f64, n_non as f64);
        let mut misses = 0usize;
        let mut false_alarms = n_non;
        let mut points = Vec::with_capacity(self.len() + 1);
        points.push((1.0, 0.0));
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            while i < order.len() && self.scores[order[i]] == s {
                if self.targets[order[i]] {
                    misses += 1;
                } else {
                    false_alarms -= 1;
                }
                i += 1;
            }
            points.push((false_alarms as f64 / nn, misses as f64 / nt));
        }
        Ok(points)
    }
}

/// `(P_fa, P_miss)` for every threshold, thresholds rising.
pub fn det_points(trials: &ScoredTrials) -> Result<Vec<(f64, f64)>> {
    trials.sweep()
}

/// Equal error rate, linearly interpolated where miss and false-alarm rates cross.
pub fn compute_eer(trials: &ScoredTrials) -> Result<f64> {
    let pts = trials.sweep()?;
    let k = pts
        .iter()
        .position(|&(fa, miss)| miss >= fa)
        .expect("the reject-all point always has miss >= fa");
    let (fa1, m1) = pts[k];
    if m1 == fa1 {
        return Ok(m1);
    }
    let (fa0, m0) = pts[k - 1];
    let d0 = m0 - fa0;
    let d1 = m1 - fa1;
    let t = d0 / (d0 - d1);
    Ok(m0 + t * (m1 - m0))
}

/// Minimum normalized detection cost over all thresholds.
pub fn compute_min_dcf(trials: &ScoredTrials, params: &DcfParams) -> Result<f64> {
    let pts = trials.sweep()?;
    let norm = (params.c_miss * params.p_target).min(params.c_fa * (1.0 - params.p_target));
    let best = pts
        .iter()
        .map(|&(fa, miss)| {
            params.c_miss * miss * params.p_target + params.c_fa * fa * (1.0 - params.p_target)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best / norm)
}

/// Percentage reduction of `new` relative to `baseline`.
pub fn relative_improvement(baseline: f64, new: f64) -> Result<f64> {
    if baseline == 0.0 || !baseline.is_finite() {
        return Err(Error::Precondition(format!("baseline must be nonzero, got {baseline}")));
    }
    Ok(100.0 * (baseline - new) / baseline)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn trials(scores: &[f64], labels: &[bool]) -> ScoredTrials {
        ScoredTrials::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// O(n^2) sweep: every candidate threshold evaluated by recounting.
    fn brute_points(t: &ScoredTrials) -> Vec<(f64, f64)> {
        let mut distinct = t.scores.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut thresholds = vec![f64::NEG_INFINITY];
        for w in distinct.windows(2) {
            thresholds.push(0.5 * (w[0] + w[1]));
        }
        thresholds.push(f64::INFINITY);
        let nt = t.targets.iter().filter(|&&x| x).count() as f64;
        let nn = t.len() as f64 - nt;
        thresholds
            .iter()
            .map(|&th| {
                let mut miss = 0.0;
                let mut fa = 0.0;
                for (s, &tar) in t.scores.iter().zip(&t.targets) {
                    if tar && *s < th {
                        miss += 1.0;
                    }
                    if !tar && *s >= th {
                        fa += 1.0;
                    }
                }
                (fa / nn, miss / nt)
            })
            .collect()
    }

    fn brute_eer(t: &ScoredTrials) -> f64 {
        let pts = brute_points(t);
        for w in pts.windows(2) {
            let (fa0, m0) = w[0];
            let (fa1, m1) = w[1];
            if m0 == fa0 {
                return m0;
            }
            if (m0 - fa0) < 0.0 && (m1 - fa1) >= 0.0 {
                if m1 == fa1 {
                    return m1;
                }
                // intersection of the two segments
                let t = (fa0 - m0) / ((m1 - m0) - (fa1 - fa0));
                return m0 + t * (m1 - m0);
            }
        }
        unreachable!()
    }

    fn random_trials(seed: u64, n: usize) -> ScoredTrials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let tar = i % 3 == 0;
            // a coarse grid forces ties
            let s: f64 = (rng.random_range(-3.0..3.0f64) * 8.0).round() / 8.0;
            scores.push(if tar { s + 1.0 } else { s });
            labels.push(tar);
        }
        trials(&scores, &labels)
    }

    #[test]
    fn eer_examples() {
        assert_eq!(compute_eer(&trials(&[3.0, 4.0, 1.0, 2.0], &[true, true, false, false])).unwrap(), 0.0);
        assert_eq!(compute_eer(&trials(&[1.0, 2.0, 3.0, 4.0], &[true, false, true, false])).unwrap(), 0.5);
    }

    #[test]
    fn eer_and_dcf_match_brute_force() {
        for seed in 0..5 {
            let t = random_trials(seed, 200);
            assert_eq!(det_points(&t).unwrap(), brute_points(&t));
            assert!((compute_eer(&t).unwrap() - brute_eer(&t)).abs() < 1e-12);
            for p in [DcfParams::SRE08, DcfParams::SRE10] {
                let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
                let brute = brute_points(&t)
                    .iter()
                    .map(|&(fa, m)| (p.c_miss * m * p.p_target + p.c_fa * fa * (1.0 - p.p_target)) / norm)
                    .fold(f64::INFINITY, f64::min);
                let got = compute_min_dcf(&t, &p).unwrap();
                assert!((got - brute).abs() < 1e-12);
                assert!(got <= 1.0);
            }
        }
    }

    #[test]
    fn one_class_input_is_rejected() {
        let t = trials(&[1.0, 2.0], &[true, true]);
        assert!(matches!(compute_eer(&t), Err(Error::OneClass)));
        assert!(matches!(compute_min_dcf(&t, &DcfParams::SRE08), Err(Error::OneClass)));
        assert!(matches!(det_points(&t), Err(Error::OneClass)));
        assert_eq!(Error::OneClass.class(), "METRIC_ONE_CLASS");
    }

    #[test]
    fn perfect_separation_costs_nothing() {
        let t = trials(&[5.0, 6.0, 1.0, 0.0], &[true, true, false, false]);
        assert_eq!(compute_min_dcf(&t, &DcfParams::SRE08).unwrap(), 0.0);
        assert_eq!(compute_min_dcf(&t, &DcfParams::SRE10).unwrap(), 0.0);
    }

    #[test]
    fn det_two_trial_example() {
        let pts = det_points(&trials(&[2.0, 1.0], &[true, false])).unwrap();
        assert_eq!(pts, vec![(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]);
    }

    #[test]
    fn relative_improvement_values() {
        assert!((relative_improvement(12.2, 9.5).unwrap() - 22.13).abs() < 0.005);
        assert!((relative_improvement(10.2, 7.7).unwrap() - 24.51).abs() < 0.005);
        assert_eq!(relative_improvement(3.0, 3.0).unwrap(), 0.0);
        assert!(relative_improvement(0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_monotone_transform(
            raw in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60)
        ) {
            let mut labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            labels[0] = true;
            labels[1] = false;
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let t = trials(&scores, &labels);
            let e = trials(&scores.iter().map(|s| s.exp()).collect::<Vec<_>>(), &labels);
            prop_assert!((compute_eer(&t).unwrap() - compute_eer(&e).unwrap()).abs() < 1e-12);
            for p in [DcfParams::SRE08, DcfParams::SRE10] {
                let a = compute_min_dcf(&t, &p).unwrap();
                let b = compute_min_dcf(&e, &p).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(a <= 1.0 + 1e-15);
            }
            let pts = det_points(&t).unwrap();
            prop_assert!(pts.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 >= w[0].1));
            let mut d = scores.clone();
            d.sort_by(f64::total_cmp);
            d.dedup();
            prop_assert!(pts.len() <= d.len() + 1);
        }
    }
}
