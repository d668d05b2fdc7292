use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio;
use crate::linalg::{cholesky_jitter, chol_log_det, floor_eigenvalues, symmetrize};
use crate::{Error, Result};

use super::{FeatureSequence, PosteriorArchive};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Gaussian mixture with full (or diagonal-restricted) covariances.
#[derive(Clone, Debug, PartialEq)]
pub struct FullGmm {
    weights: DVector<f64>,
    /// `C x D`
    means: DMatrix<f64>,
    covariances: Vec<DMatrix<f64>>,
    diagonal: bool,
}

impl FullGmm {
    pub fn new(
        weights: DVector<f64>,
        means: DMatrix<f64>,
        covariances: Vec<DMatrix<f64>>,
        diagonal: bool,
    ) -> Result<Self> {
        let c = weights.len();
        let d = means.ncols();
        if c == 0 {
            return Err(Error::Precondition("a GMM needs at least one component".into()));
        }
        if means.nrows() != c || covariances.len() != c {
            return Err(Error::Dimension(format!(
                "{c} weights, {} mean rows, {} covariances",
                means.nrows(),
                covariances.len()
            )));
        }
        if covariances.iter().any(|s| s.nrows() != d || s.ncols() != d) {
            return Err(Error::Dimension(format!("covariances must be {d}x{d}")));
        }
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) || (weights.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::Precondition("GMM weights must form a probability vector".into()));
        }
        Ok(Self {
            weights,
            means,
            covariances,
            diagonal,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn scorer(&self) -> Result<GmmScorer> {
        let mut whiteners = Vec::with_capacity(self.num_components());
        let mut log_norm = Vec::with_capacity(self.num_components());
        let d = self.dim();
        for cov in &self.covariances {
            let chol = cholesky_jitter(cov)?;
            let l_inv = chol
                .l()
                .solve_lower_triangular(&DMatrix::identity(d, d))
                .ok_or_else(|| Error::Numerical("singular covariance factor".into()))?;
            whiteners.push(l_inv.transpose());
            log_norm.push(-0.5 * (d as f64 * LN_2PI + chol_log_det(&chol)));
        }
        Ok(GmmScorer {
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            means: self.means.clone(),
            whiteners,
            log_norm,
        })
    }

    /// Total log-likelihood of a corpus.
    pub fn log_likelihood(&self, corpus: &[FeatureSequence]) -> Result<f64> {
        let scorer = self.scorer()?;
        Ok(corpus
            .iter()
            .map(|u| scorer.posteriors(&u.frames).1.sum())
            .sum())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        binio::write_magic(&mut w, b"GMM1")?;
        binio::write_u32(&mut w, self.num_components())?;
        binio::write_u32(&mut w, self.dim())?;
        binio::write_u8(&mut w, self.diagonal as u8)?;
        binio::write_vector_f64(&mut w, &self.weights)?;
        binio::write_matrix_f64(&mut w, &self.means)?;
        for cov in &self.covariances {
            if self.diagonal {
                binio::write_vector_f64(&mut w, &cov.diagonal())?;
            } else {
                binio::write_matrix_f64(&mut w, cov)?;
            }
        }
        binio::flush(w, path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        binio::expect_magic(&mut r, b"GMM1")?;
        let c = binio::read_u32(&mut r)?;
        let d = binio::read_u32(&mut r)?;
        let diagonal = binio::read_u8(&mut r)? != 0;
        let weights = binio::read_vector_f64(&mut r, c)?;
        let means = binio::read_matrix_f64(&mut r, c, d)?;
        let covariances = (0..c)
            .map(|_| {
                if diagonal {
                    binio::read_vector_f64(&mut r, d).map(|v| DMatrix::from_diagonal(&v))
                } else {
                    binio::read_matrix_f64(&mut r, d, d)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, means, covariances, diagonal)
    }
}

/// Precomputed per-component whitening transforms for fast frame scoring.
#[derive(Clone, Debug)]
pub struct GmmScorer {
    log_weights: Vec<f64>,
    means: DMatrix<f64>,
    whiteners: Vec<DMatrix<f64>>,
    log_norm: Vec<f64>,
}

impl GmmScorer {
    /// `log w_c + log N(y_t | mu_c, Sigma_c)` for every frame and component.
    pub fn log_joint(&self, frames: &DMatrix<f64>) -> DMatrix<f64> {
        let t = frames.nrows();
        let c = self.log_weights.len();
        let mut out = DMatrix::zeros(t, c);
        for k in 0..c {
            let mut centered = frames.clone();
            let mu = self.means.row(k);
            for mut row in centered.row_iter_mut() {
                row -= &mu;
            }
            let z = centered * &self.whiteners[k];
            let base = self.log_weights[k] + self.log_norm[k];
            for (i, row) in z.row_iter().enumerate() {
                out[(i, k)] = base - 0.5 * row.norm_squared();
            }
        }
        out
    }

    /// Frame posteriors (`T x C`) and per-frame log-likelihoods.
    pub fn posteriors(&self, frames: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut lj = self.log_joint(frames);
        let mut ll = DVector::zeros(frames.nrows());
        for (i, mut row) in lj.row_iter_mut().enumerate() {
            let max = row.max();
            let total = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            ll[i] = total;
            row.apply(|x| *x = (*x - total).exp());
            let s = row.sum();
            row /= s;
        }
        (lj, ll)
    }
}

/// Posterior of every mixture component for every frame of an utterance.
pub fn gmm_posteriors(gmm: &FullGmm, utterance: &FeatureSequence) -> Result<DMatrix<f64>> {
    check_utterance(utterance, gmm.dim())?;
    Ok(gmm.scorer()?.posteriors(&utterance.frames).0)
}

fn check_utterance(u: &FeatureSequence, dim: usize) -> Result<()> {
    if u.dim() != dim && u.num_frames() > 0 {
        return Err(Error::Dimension(format!(
            "{}: feature dim {} vs model dim {dim}",
            u.utterance_id,
            u.dim()
        )));
    }
    u.check_finite()
}

#[derive(Clone, Debug)]
pub struct GmmConfig {
    pub components: usize,
    pub diag_iters: usize,
    pub full_iters: usize,
    pub seed: u64,
    /// Covariance floor relative to the global per-dimension variance.
    pub floor_scale: f64,
    pub kmeans_rounds: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 64,
            diag_iters: 4,
            full_iters: 4,
            seed: 0,
            floor_scale: 1e-4,
            kmeans_rounds: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmmTraining {
    pub gmm: FullGmm,
    /// Corpus log-likelihood before each EM iteration and after the last.
    pub log_likelihoods: Vec<f64>,
    /// Number of M-step covariance updates that hit the floor.
    pub floored: usize,
}

/// Sufficient statistics of one E-step.
struct Accumulator {
    occupancy: DVector<f64>,
    first: DMatrix<f64>,
    second: Vec<DMatrix<f64>>,
    log_likelihood: f64,
}

impl Accumulator {
    fn zeros(c: usize, d: usize) -> Self {
        Self {
            occupancy: DVector::zeros(c),
            first: DMatrix::zeros(c, d),
            second: vec![DMatrix::zeros(d, d); c],
            log_likelihood: 0.0,
        }
    }

    fn from_posteriors(frames: &DMatrix<f64>, post: &DMatrix<f64>) -> Self {
        let c = post.ncols();
        let occupancy = post.row_sum().transpose();
        let first = post.transpose() * frames;
        let second = (0..c)
            .map(|k| {
                let mut weighted = frames.clone();
                for (mut row, &g) in weighted.row_iter_mut().zip(post.column(k).iter()) {
                    row *= g;
                }
                weighted.transpose() * frames
            })
            .collect();
        Self {
            occupancy,
            first,
            second,
            log_likelihood: 0.0,
        }
    }

    fn add(&mut self, other: &Self) {
        self.occupancy += &other.occupancy;
        self.first += &other.first;
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
        self.log_likelihood += other.log_likelihood;
    }
}

struct Floor {
    per_dim: DVector<f64>,
    eigen: f64,
}

fn corpus_dim(corpus: &[FeatureSequence]) -> Result<usize> {
    let first = corpus
        .iter()
        .find(|u| u.num_frames() > 0)
        .ok_or_else(|| Error::Precondition("empty corpus".into()))?;
    let d = first.dim();
    for u in corpus {
        check_utterance(u, d)?;
    }
    Ok(d)
}

/// Utterance indices in utterance-id order, the fixed reduction order.
fn reduction_order(corpus: &[FeatureSequence]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.sort_by(|&a, &b| corpus[a].utterance_id.cmp(&corpus[b].utterance_id));
    idx
}

fn m_step(
    acc: &Accumulator,
    previous: Option<&FullGmm>,
    diagonal: bool,
    floor: &Floor,
    floored: &mut usize,
) -> Result<FullGmm> {
    let c = acc.occupancy.len();
    let d = acc.first.ncols();
    let total: f64 = acc.occupancy.sum();
    let mut weights = acc.occupancy.clone() / total;
    let mut means = DMatrix::zeros(c, d);
    let mut covariances = Vec::with_capacity(c);
    for k in 0..c {
        let n = acc.occupancy[k];
        if n <= 1e-10 {
            log::warn!("GMM component {k} has no occupancy; keeping previous parameters");
            weights[k] = 0.0;
            match previous {
                Some(p) => {
                    means.set_row(k, &p.means.row(k));
                    covariances.push(p.covariances[k].clone());
                }
                None => covariances.push(DMatrix::from_diagonal(&floor.per_dim)),
            }
            continue;
        }
        let mu = acc.first.row(k).transpose() / n;
        let mut cov = &acc.second[k] / n - &mu * mu.transpose();
        cov = symmetrize(&cov);
        if diagonal {
            let mut diag = cov.diagonal();
            let mut hit = false;
            for (v, f) in diag.iter_mut().zip(floor.per_dim.iter()) {
                if *v < *f {
                    *v = *f;
                    hit = true;
                }
            }
            if hit {
                *floored += 1;
                log::warn!("GMM component {k}: variance floored (component collapse)");
            }
            cov = DMatrix::from_diagonal(&diag);
        } else {
            let (c2, hit) = floor_eigenvalues(&cov, floor.eigen);
            if hit {
                *floored += 1;
                log::warn!("GMM component {k}: covariance eigenvalues floored (component collapse)");
            }
            cov = c2;
        }
        means.set_row(k, &mu.transpose());
        covariances.push(cov);
    }
    let s = weights.sum();
    weights /= s;
    FullGmm::new(weights, means, covariances, diagonal)
}

fn e_step(gmm: &FullGmm, corpus: &[FeatureSequence], order: &[usize]) -> Result<Accumulator> {
    let scorer = gmm.scorer()?;
    let parts: Vec<Accumulator> = order
        .par_iter()
        .map(|&i| {
            let frames = &corpus[i].frames;
            let (post, ll) = scorer.posteriors(frames);
            let mut acc = Accumulator::from_posteriors(frames, &post);
            acc.log_likelihood = ll.sum();
            acc
        })
        .collect();
    let mut total = Accumulator::zeros(gmm.num_components(), gmm.dim());
    for p in &parts {
        total.add(p);
    }
    Ok(total)
}

/// k-means seeding: `C` distinct random frames as centres, then Lloyd rounds.
fn kmeans_init(pooled: &DMatrix<f64>, cfg: &GmmConfig, floor: &Floor) -> Result<FullGmm> {
    let n = pooled.nrows();
    let d = pooled.ncols();
    let c = cfg.components;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = rand::seq::index::sample(&mut rng, n, c).into_vec();
    let mut centres = pooled.select_rows(picks.iter());
    let mut assign = vec![0usize; n];
    for _ in 0..cfg.kmeans_rounds.max(1) {
        for (i, row) in pooled.row_iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for k in 0..c {
                let dist = (row - centres.row(k)).norm_squared();
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            assign[i] = best.1;
        }
        let mut sums = DMatrix::zeros(c, d);
        let mut counts = vec![0usize; c];
        for (i, &k) in assign.iter().enumerate() {
            let mut r = sums.row_mut(k);
            r += pooled.row(i);
            counts[k] += 1;
        }
        for k in 0..c {
            if counts[k] > 0 {
                centres.set_row(k, &(sums.row(k) / counts[k] as f64));
            }
        }
    }
    let mut counts = vec![0usize; c];
    let mut sq = DMatrix::zeros(c, d);
    for (i, &k) in assign.iter().enumerate() {
        counts[k] += 1;
        let diff = pooled.row(i) - centres.row(k);
        let mut r = sq.row_mut(k);
        r += diff.component_mul(&diff);
    }
    let global_var = &floor.per_dim * 1e4;
    let covariances = (0..c)
        .map(|k| {
            let var = if counts[k] >= 2 {
                (sq.row(k).transpose() / counts[k] as f64)
                    .zip_map(&floor.per_dim, |v, f| v.max(f))
            } else {
                global_var.clone()
            };
            DMatrix::from_diagonal(&var)
        })
        .collect();
    let weights = DVector::from_iterator(c, counts.iter().map(|&m| (m.max(1)) as f64));
    let weights = &weights / weights.sum();
    FullGmm::new(weights, centres, covariances, true)
}

/// EM training: k-means seeding, `diag_iters` diagonal-covariance iterations,
/// then `full_iters` full-covariance iterations.
pub fn train_gmm_em(corpus: &[FeatureSequence], cfg: &GmmConfig) -> Result<GmmTraining> {
    let d = corpus_dim(corpus)?;
    let total_frames: usize = corpus.iter().map(|u| u.num_frames()).sum();
    if cfg.components == 0 {
        return Err(Error::Precondition("need at least one component".into()));
    }
    if total_frames < cfg.components {
        return Err(Error::Precondition(format!(
            "{} components but only {total_frames} frames",
            cfg.components
        )));
    }
    let order = reduction_order(corpus);
    let pooled = {
        let mut m = DMatrix::zeros(total_frames, d);
        let mut at = 0;
        for &i in &order {
            let f = &corpus[i].frames;
            m.rows_mut(at, f.nrows()).copy_from(f);
            at += f.nrows();
        }
        m
    };
    let mean = pooled.row_mean();
    let mut var = DVector::zeros(d);
    for row in pooled.row_iter() {
        let diff = row - &mean;
        var += diff.component_mul(&diff).transpose();
    }
    var /= total_frames as f64;
    let var = var.map(|v| v.max(f64::MIN_POSITIVE));
    let floor = Floor {
        eigen: cfg.floor_scale * var.mean(),
        per_dim: var * cfg.floor_scale,
    };

    let mut gmm = kmeans_init(&pooled, cfg, &floor)?;
    drop(pooled);
    let mut log_likelihoods = Vec::new();
    let mut floored = 0;
    let schedule = std::iter::repeat_n(true, cfg.diag_iters).chain(std::iter::repeat_n(false, cfg.full_iters));
    for diagonal in schedule {
        let acc = e_step(&gmm, corpus, &order)?;
        log_likelihoods.push(acc.log_likelihood);
        log::debug!("GMM EM: log-likelihood {:.6}", acc.log_likelihood);
        gmm = m_step(&acc, Some(&gmm), diagonal, &floor, &mut floored)?;
    }
    log_likelihoods.push(gmm.log_likelihood(corpus)?);
    Ok(GmmTraining {
        gmm,
        log_likelihoods,
        floored,
    })
}

/// One M-step from externally supplied frame posteriors (e.g. senone
/// posteriors), giving the "supervised" GMM whose components are the
/// posterior classes.
pub fn gmm_from_posteriors(
    corpus: &[FeatureSequence],
    posteriors: &PosteriorArchive,
    diagonal: bool,
    floor_scale: f64,
) -> Result<FullGmm> {
    let d = corpus_dim(corpus)?;
    let c = posteriors
        .num_components()
        .ok_or_else(|| Error::Precondition("empty posterior archive".into()))?;
    let order = reduction_order(corpus);
    let parts: Vec<Result<Accumulator>> = order
        .par_iter()
        .map(|&i| {
            let u = &corpus[i];
            let entry = posteriors.get(&u.utterance_id).ok_or_else(|| {
                Error::Precondition(format!("no posteriors for {}", u.utterance_id))
            })?;
            if entry.posteriors.nrows() != u.num_frames() || entry.posteriors.ncols() != c {
                return Err(Error::Dimension(format!(
                    "{}: posteriors {}x{} for {} frames",
                    u.utterance_id,
                    entry.posteriors.nrows(),
                    entry.posteriors.ncols(),
                    u.num_frames()
                )));
            }
            Ok(Accumulator::from_posteriors(&u.frames, &entry.posteriors))
        })
        .collect();
    let mut total = Accumulator::zeros(c, d);
    let mut n = 0usize;
    let mut mean = DVector::zeros(d);
    let mut sq = DVector::zeros(d);
    for (p, &i) in parts.into_iter().zip(&order) {
        total.add(&p?);
        for row in corpus[i].frames.row_iter() {
            mean += row.transpose();
            sq += row.transpose().component_mul(&row.transpose());
            n += 1;
        }
    }
    mean /= n as f64;
    let var = (sq / n as f64 - mean.component_mul(&mean)).map(|v| v.max(f64::MIN_POSITIVE));
    let floor = Floor {
        eigen: floor_scale * var.mean(),
        per_dim: var * floor_scale,
    };
    let mut floored = 0;
    m_step(&total, None, diagonal, &floor, &mut floored)
}
