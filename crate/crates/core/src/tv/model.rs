use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use crate::linalg::standard_normal;
use rayon::prelude::*;

use crate::linalg::{chol_log_det, cholesky_jitter, symmetrize};
use crate::ubm::FullGmm;
use crate::{Error, Result};

use super::{IVector, SuffStats};

/// Low-rank total variability matrix `T` (`C*D x R`, component-major rows)
/// together with the UBM means and covariances it was trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct TotalVariabilityModel {
    pub t: DMatrix<f64>,
    pub ubm_means: DMatrix<f64>,
    pub ubm_covariances: Vec<DMatrix<f64>>,
}

impl TotalVariabilityModel {
    pub fn new(
        t: DMatrix<f64>,
        ubm_means: DMatrix<f64>,
        ubm_covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let (c, d) = ubm_means.shape();
        if t.nrows() != c * d || ubm_covariances.len() != c {
            return Err(Error::Dimension(format!(
                "T has {} rows, UBM is {c} x {d} with {} covariances",
                t.nrows(),
                ubm_covariances.len()
            )));
        }
        if t.ncols() == 0 || t.ncols() > c * d {
            return Err(Error::Precondition(format!(
                "i-vector rank {} must be in 1..={}",
                t.ncols(),
                c * d
            )));
        }
        Ok(Self {
            t,
            ubm_means,
            ubm_covariances,
        })
    }

    pub fn num_components(&self) -> usize {
        self.ubm_means.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.ubm_means.ncols()
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    /// Block of `T` belonging to component `c` (`D x R`).
    pub fn block(&self, c: usize) -> DMatrix<f64> {
        let d = self.feature_dim();
        self.t.rows(c * d, d).into_owned()
    }

    pub fn extractor(&self) -> Result<IvectorExtractor> {
        let c = self.num_components();
        let d = self.feature_dim();
        let r = self.rank();
        let mut sigma_inv_t = DMatrix::zeros(c * d, r);
        let mut precision_terms = Vec::with_capacity(c);
        for k in 0..c {
            let chol = cholesky_jitter(&self.ubm_covariances[k])?;
            let tk = self.block(k);
            let sit = chol.solve(&tk);
            precision_terms.push(symmetrize(&(tk.transpose() * &sit)));
            sigma_inv_t.rows_mut(k * d, d).copy_from(&sit);
        }
        Ok(IvectorExtractor {
            sigma_inv_t,
            precision_terms,
            rank: r,
            dim: d,
        })
    }
}

/// Cached `Sigma_c^-1 T_c` and `T_c' Sigma_c^-1 T_c` for repeated extraction.
#[derive(Clone, Debug)]
pub struct IvectorExtractor {
    sigma_inv_t: DMatrix<f64>,
    precision_terms: Vec<DMatrix<f64>>,
    rank: usize,
    dim: usize,
}

/// Per-utterance posterior quantities of the latent `w`.
pub(crate) struct Posterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `0.5 b' L^-1 b - 0.5 log|L|`, the utterance's share of the
    /// log-likelihood terms that depend on `T`.
    pub objective: f64,
}

impl IvectorExtractor {
    fn check(&self, stats: &SuffStats) -> Result<()> {
        if !stats.centered {
            return Err(Error::Precondition(format!(
                "{}: statistics must be centered before extraction",
                stats.utterance_id
            )));
        }
        if stats.zeroth.len() != self.precision_terms.len() || stats.first.ncols() != self.dim {
            return Err(Error::Dimension(format!(
                "{}: stats are {}x{}, model expects {}x{}",
                stats.utterance_id,
                stats.zeroth.len(),
                stats.first.ncols(),
                self.precision_terms.len(),
                self.dim
            )));
        }
        if stats.zeroth.iter().chain(stats.first.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("statistics of {}", stats.utterance_id)));
        }
        Ok(())
    }

    pub(crate) fn posterior(&self, stats: &SuffStats) -> Result<Posterior> {
        self.check(stats)?;
        let r = self.rank;
        let mut precision = DMatrix::identity(r, r);
        for (n, term) in stats.zeroth.iter().zip(&self.precision_terms) {
            if *n != 0.0 {
                precision += term * *n;
            }
        }
        // vec(F) in component-major order matches the rows of T
        let flat = DVector::from_iterator(
            stats.first.len(),
            stats.first.row_iter().flat_map(|row| row.iter().copied().collect::<Vec<_>>()),
        );
        let linear = self.sigma_inv_t.tr_mul(&flat);
        let chol = cholesky_jitter(&precision)?;
        let mean = chol.solve(&linear);
        let covariance = symmetrize(&chol.inverse());
        let objective = 0.5 * linear.dot(&mean) - 0.5 * chol_log_det(&chol);
        Ok(Posterior {
            mean,
            covariance,
            objective,
        })
    }

    pub fn extract(&self, stats: &SuffStats) -> Result<IVector> {
        let p = self.posterior(stats)?;
        Ok(IVector {
            utterance_id: stats.utterance_id.clone(),
            mean: p.mean,
            posterior_covariance: Some(p.covariance),
        })
    }
}

/// MAP i-vector: mean `L^-1 T' Sigma^-1 F` and covariance `L^-1`, where
/// `L = I + sum_c N_c T_c' Sigma_c^-1 T_c`.
pub fn extract_ivector(stats: &SuffStats, model: &TotalVariabilityModel) -> Result<IVector> {
    model.extractor()?.extract(stats)
}

#[derive(Clone, Debug)]
pub struct TvConfig {
    pub rank: usize,
    pub iters: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian initialisation of `T`.
    pub init_scale: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            rank: 64,
            iters: 5,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TvTraining {
    pub model: TotalVariabilityModel,
    /// EM objective before each iteration and after the last one.
    pub objective: Vec<f64>,
}

/// Sum of the per-utterance objective over the corpus (fixed order).
fn corpus_posteriors(
    ext: &IvectorExtractor,
    stats: &[SuffStats],
    order: &[usize],
) -> Result<Vec<Posterior>> {
    order
        .par_iter()
        .map(|&i| ext.posterior(&stats[i]))
        .collect()
}

/// EM training of `T` with `Sigma` fixed to the UBM covariances.
pub fn train_tv_em(stats: &[SuffStats], ubm: &FullGmm, cfg: &TvConfig) -> Result<TvTraining> {
    if cfg.rank == 0 {
        return Err(Error::Precondition("i-vector rank must be at least 1".into()));
    }
    if stats.is_empty() {
        return Err(Error::Precondition("no statistics to train on".into()));
    }
    if let Some(s) = stats.iter().find(|s| !s.centered) {
        return Err(Error::Precondition(format!(
            "{}: statistics must be centered",
            s.utterance_id
        )));
    }
    let c = ubm.num_components();
    let d = ubm.dim();
    let r = cfg.rank;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t0 = DMatrix::from_fn(c * d, r, |_, _| {
        cfg.init_scale * standard_normal(&mut rng)
    });
    let mut model = TotalVariabilityModel::new(t0, ubm.means().clone(), ubm.covariances().to_vec())?;

    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| stats[a].utterance_id.cmp(&stats[b].utterance_id));

    let total_occupancy = stats.iter().fold(DVector::zeros(c), |acc, s| acc + &s.zeroth);
    let mut objective = Vec::with_capacity(cfg.iters + 1);
    for iter in 0..cfg.iters {
        let ext = model.extractor()?;
        let posts = corpus_posteriors(&ext, stats, &order)?;
        let mut obj = 0.0;
        let mut second = vec![DMatrix::<f64>::zeros(r, r); c];
        let mut cross = DMatrix::<f64>::zeros(c * d, r);
        for (&i, p) in order.iter().zip(&posts) {
            obj += p.objective;
            let s = &stats[i];
            let moment = &p.covariance + &p.mean * p.mean.transpose();
            for k in 0..c {
                let n = s.zeroth[k];
                if n != 0.0 {
                    second[k] += &moment * n;
                }
            }
            for k in 0..c {
                let f = s.first.row(k).transpose();
                let mut block = cross.rows_mut(k * d, d);
                block.ger(1.0, &f, &p.mean, 1.0);
            }
        }
        objective.push(obj);
        log::debug!("TV EM iteration {iter}: objective {obj:.6}");

        let mut t = DMatrix::zeros(c * d, r);
        for k in 0..c {
            let mut a = second[k].clone();
            if total_occupancy[k] <= 1e-10 {
                log::warn!("TV EM: component {k} unobserved in the corpus; adding 1e-6 ridge");
                for j in 0..r {
                    a[(j, j)] += 1e-6;
                }
            }
            let chol = cholesky_jitter(&symmetrize(&a))?;
            let block_t = chol.solve(&cross.rows(k * d, d).transpose());
            t.rows_mut(k * d, d).copy_from(&block_t.transpose());
        }
        model.t = t;
    }
    let ext = model.extractor()?;
    objective.push(corpus_posteriors(&ext, stats, &order)?.iter().map(|p| p.objective).sum());
    Ok(TvTraining { model, objective })
}
