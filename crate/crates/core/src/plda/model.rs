use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use crate::linalg::standard_normal;

use crate::binio;
use crate::linalg::{chol_log_det, cholesky_jitter, floor_eigenvalues, symmetrize};
use crate::tv::IVector;
use crate::{Error, Result};

use super::{check_dims, group_by_speaker, Preprocessor};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Simplified G-PLDA: `w = r + U x + e`, `x ~ N(0, I_Q)`, `e ~ N(0, Sigma')`.
#[derive(Clone, Debug, PartialEq)]
pub struct PldaModel {
    pub mean: DVector<f64>,
    /// Between-speaker subspace, `R x Q`.
    pub between: DMatrix<f64>,
    /// Residual (within-speaker) covariance `Sigma'`.
    pub within: DMatrix<f64>,
    pub preprocessing: Option<Preprocessor>,
    scoring: ScoringTerms,
}

/// Quadratic form of the two-covariance LLR:
/// `0.5 (a'Qa + b'Qb) + a'Pb + constant`.
#[derive(Clone, Debug, PartialEq)]
struct ScoringTerms {
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    constant: f64,
}

impl ScoringTerms {
    fn new(between: &DMatrix<f64>, within: &DMatrix<f64>) -> Result<Self> {
        let b = between * between.transpose();
        let total = &b + within;
        let total_chol = cholesky_jitter(&total)?;
        let total_inv = symmetrize(&total_chol.inverse());
        // Schur complement of the same-speaker joint covariance
        let schur = &total - &b * &total_inv * &b;
        let schur = symmetrize(&schur);
        let schur_chol = cholesky_jitter(&schur)?;
        let a1 = symmetrize(&schur_chol.inverse());
        let a2 = -(&total_inv * &b * &a1);
        let p = symmetrize(&(-a2));
        Ok(Self {
            q: &total_inv - &a1,
            p,
            constant: 0.5 * chol_log_det(&total_chol) - 0.5 * chol_log_det(&schur_chol),
        })
    }
}

impl PldaModel {
    pub fn new(
        mean: DVector<f64>,
        between: DMatrix<f64>,
        within: DMatrix<f64>,
        preprocessing: Option<Preprocessor>,
    ) -> Result<Self> {
        let r = mean.len();
        if between.nrows() != r || within.shape() != (r, r) || between.ncols() > r {
            return Err(Error::Dimension(format!(
                "PLDA mean {r}, U {:?}, Sigma' {:?}",
                between.shape(),
                within.shape()
            )));
        }
        if let Some(p) = &preprocessing {
            if p.output_dim() != r {
                return Err(Error::Dimension(format!(
                    "preprocessing outputs {} dims, PLDA expects {r}",
                    p.output_dim()
                )));
            }
        }
        let scoring = ScoringTerms::new(&between, &within)?;
        Ok(Self {
            mean,
            between,
            within,
            preprocessing,
            scoring,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn subspace_rank(&self) -> usize {
        self.between.ncols()
    }

    /// Apply the stored preprocessing (if any) to a raw i-vector.
    pub fn prepare(&self, iv: &IVector) -> Result<IVector> {
        match &self.preprocessing {
            Some(p) => p.apply(iv),
            None => Ok(iv.clone()),
        }
    }

    pub fn with_preprocessing(self, preprocessing: Option<Preprocessor>) -> Result<Self> {
        Self::new(self.mean, self.between, self.within, preprocessing)
    }

    /// Log-likelihood of a set of speakers' vectors under the model.
    pub fn log_likelihood(&self, vectors: &[DVector<f64>], speakers: &[String]) -> Result<f64> {
        let groups = group_by_speaker(vectors.len(), speakers)?;
        let centered: Vec<DVector<f64>> = vectors.iter().map(|v| v - &self.mean).collect();
        let stats = SpeakerStats::collect(&centered, &groups);
        let within_chol = cholesky_jitter(&self.within)?;
        Ok(e_step(&self.between, &within_chol, &stats)?.log_likelihood)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        binio::write_magic(&mut w, b"PLD1")?;
        binio::write_u32(&mut w, self.dim())?;
        binio::write_u32(&mut w, self.subspace_rank())?;
        binio::write_vector_f64(&mut w, &self.mean)?;
        binio::write_matrix_f64(&mut w, &self.between)?;
        binio::write_matrix_f64(&mut w, &self.within)?;
        match &self.preprocessing {
            Some(p) => {
                binio::write_u8(&mut w, 1)?;
                p.write_block(&mut w)?;
            }
            None => binio::write_u8(&mut w, 0)?,
        }
        binio::flush(w, path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        binio::expect_magic(&mut r, b"PLD1")?;
        let dim = binio::read_u32(&mut r)?;
        let q = binio::read_u32(&mut r)?;
        let mean = binio::read_vector_f64(&mut r, dim)?;
        let between = binio::read_matrix_f64(&mut r, dim, q)?;
        let within = binio::read_matrix_f64(&mut r, dim, dim)?;
        let preprocessing = if binio::read_u8(&mut r)? != 0 {
            Some(Preprocessor::read_block(&mut r)?)
        } else {
            None
        };
        Self::new(mean, between, within, preprocessing)
    }
}

/// Two-covariance log-likelihood ratio of the same-speaker hypothesis.
/// Inputs must already be preprocessed.
pub fn score_llr(model: &PldaModel, enroll: &IVector, test: &IVector) -> Result<f64> {
    let r = model.dim();
    if enroll.dim() != r || test.dim() != r {
        return Err(Error::Dimension(format!(
            "scoring {} ({}) against {} ({}) with a {r}-dim PLDA",
            enroll.utterance_id,
            enroll.dim(),
            test.utterance_id,
            test.dim()
        )));
    }
    let a = &enroll.mean - &model.mean;
    let b = &test.mean - &model.mean;
    let s = &model.scoring;
    let qa = &s.q * &a;
    let qb = &s.q * &b;
    let pa = &s.p * &a;
    let pb = &s.p * &b;
    // both halves are written symmetrically so that swapping the arguments
    // reproduces the same floating-point operations
    let quad = 0.5 * (a.dot(&qa) + b.dot(&qb));
    let cross = 0.5 * (a.dot(&pb) + b.dot(&pa));
    Ok(quad + cross + s.constant)
}

#[derive(Clone, Debug)]
pub struct PldaConfig {
    /// Between-speaker subspace rank `Q`.
    pub rank: usize,
    pub iters: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct PldaTraining {
    pub model: PldaModel,
    /// Data log-likelihood before each iteration and after the last.
    pub log_likelihoods: Vec<f64>,
}

struct SpeakerStats {
    counts: Vec<f64>,
    sums: Vec<DVector<f64>>,
    scatter: DMatrix<f64>,
    total: f64,
}

impl SpeakerStats {
    fn collect(
        centered: &[DVector<f64>],
        groups: &std::collections::BTreeMap<&str, Vec<usize>>,
    ) -> Self {
        let r = centered[0].len();
        let mut scatter = DMatrix::zeros(r, r);
        let mut counts = Vec::with_capacity(groups.len());
        let mut sums = Vec::with_capacity(groups.len());
        for idx in groups.values() {
            let mut sum = DVector::zeros(r);
            for &i in idx {
                sum += &centered[i];
                scatter.ger(1.0, &centered[i], &centered[i], 1.0);
            }
            counts.push(idx.len() as f64);
            sums.push(sum);
        }
        Self {
            total: centered.len() as f64,
            counts,
            sums,
            scatter,
        }
    }
}

struct EStep {
    /// `sum_s sum_i x_i E[y_s]'`, `R x Q`.
    cross: DMatrix<f64>,
    /// `sum_s n_s E[y_s y_s']`, `Q x Q`.
    second: DMatrix<f64>,
    log_likelihood: f64,
}

fn e_step(
    between: &DMatrix<f64>,
    within_chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    stats: &SpeakerStats,
) -> Result<EStep> {
    let r = between.nrows();
    let q = between.ncols();
    let within_inv = symmetrize(&within_chol.inverse());
    let ut_winv = between.transpose() * &within_inv;
    let ut_winv_u = symmetrize(&(&ut_winv * between));
    let mut cross = DMatrix::zeros(r, q);
    let mut second = DMatrix::zeros(q, q);
    let mut ll = -0.5
        * (stats.total * (r as f64 * LN_2PI + chol_log_det(within_chol))
            + (&within_inv).component_mul(&stats.scatter).sum());
    for (n, sum) in stats.counts.iter().zip(&stats.sums) {
        if q == 0 {
            continue;
        }
        let precision = DMatrix::identity(q, q) + &ut_winv_u * *n;
        let chol = cholesky_jitter(&precision)?;
        let proj = &ut_winv * sum;
        let ex = chol.solve(&proj);
        ll += 0.5 * proj.dot(&ex) - 0.5 * chol_log_det(&chol);
        cross.ger(1.0, sum, &ex, 1.0);
        let exx = symmetrize(&chol.inverse()) + &ex * ex.transpose();
        second += exx * *n;
    }
    Ok(EStep {
        cross,
        second,
        log_likelihood: ll,
    })
}

/// EM training of the simplified G-PLDA model. `r` is fixed to the sample
/// mean; `U` is initialised from a scaled PCA of the speaker means.
pub fn train_plda_em(
    vectors: &[DVector<f64>],
    speakers: &[String],
    cfg: &PldaConfig,
) -> Result<PldaTraining> {
    let r = check_dims(vectors)?;
    let groups = group_by_speaker(vectors.len(), speakers)?;
    if groups.len() < 2 {
        return Err(Error::Precondition(
            "PLDA needs at least two speakers to identify the between-speaker subspace".into(),
        ));
    }
    if cfg.rank > r {
        return Err(Error::Precondition(format!("PLDA rank {} exceeds dim {r}", cfg.rank)));
    }
    let n = vectors.len() as f64;
    let mean = vectors.iter().fold(DVector::zeros(r), |acc, v| acc + v) / n;
    let centered: Vec<DVector<f64>> = vectors.iter().map(|v| v - &mean).collect();
    let stats = SpeakerStats::collect(&centered, &groups);
    let total_cov = symmetrize(&(&stats.scatter / n));
    let floor = 1e-10 * (total_cov.trace() / r as f64).max(f64::MIN_POSITIVE);
    let q = cfg.rank;

    // initialisation: PCA of speaker means for U, pooled within scatter for Sigma'
    let mut spk_cov = DMatrix::zeros(r, r);
    let mut within = stats.scatter.clone();
    for (cnt, sum) in stats.counts.iter().zip(&stats.sums) {
        let m = sum / *cnt;
        spk_cov.ger(1.0, &m, &m, 1.0);
        within.ger(-*cnt, &m, &m, 1.0);
    }
    spk_cov /= stats.counts.len() as f64;
    within = symmetrize(&(within / n));
    let eig = SymmetricEigen::new(symmetrize(&spk_cov));
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(floor);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut between = DMatrix::zeros(r, q);
    for (j, &k) in order.iter().take(q).enumerate() {
        let scale = eig.eigenvalues[k].max(1e-3 * top).sqrt();
        let col = eig.eigenvectors.column(k) * scale;
        between.set_column(j, &col);
    }
    let jitter = 1e-3 * top.sqrt();
    between.iter_mut().for_each(|x| {
        *x += jitter * standard_normal(&mut rng)
    });
    if q == 0 {
        within = total_cov.clone();
    }
    let mut within = floor_eigenvalues(&within, floor.max(1e-6 * total_cov.trace() / r as f64)).0;

    let mut log_likelihoods = Vec::with_capacity(cfg.iters + 1);
    for iter in 0..cfg.iters {
        let within_chol = cholesky_jitter(&within)?;
        let es = e_step(&between, &within_chol, &stats)?;
        log_likelihoods.push(es.log_likelihood);
        log::debug!("PLDA EM iteration {iter}: log-likelihood {:.6}", es.log_likelihood);
        if q == 0 {
            within = total_cov.clone();
            continue;
        }
        let second_chol = cholesky_jitter(&es.second)?;
        between = second_chol.solve(&es.cross.transpose()).transpose();
        let new_within = (&stats.scatter - &between * es.cross.transpose()) / n;
        within = floor_eigenvalues(&symmetrize(&new_within), floor).0;
    }
    let within_chol = cholesky_jitter(&within)?;
    log_likelihoods.push(e_step(&between, &within_chol, &stats)?.log_likelihood);
    let model = PldaModel::new(mean, between, within, None)?;
    Ok(PldaTraining {
        model,
        log_likelihoods,
    })
}


#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::linalg::largest_principal_angle_deg;

    fn sample_planted(
        rng: &mut ChaCha8Rng,
        u: &DMatrix<f64>,
        within_sd: f64,
        speakers: usize,
        per: usize,
    ) -> (Vec<DVector<f64>>, Vec<String>) {
        let (r, q) = u.shape();
        let mut vecs = Vec::new();
        let mut labels = Vec::new();
        for s in 0..speakers {
            let x = DVector::from_fn(q, |_, _| standard_normal(rng));
            let centre = u * x + DVector::from_element(r, 0.5);
            for _ in 0..per {
                let e = DVector::from_fn(r, |_, _| within_sd * standard_normal(rng));
                vecs.push(&centre + e);
                labels.push(format!("spk{s:03}"));
            }
        }
        (vecs, labels)
    }

    #[test]
    fn planted_between_subspace_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = DMatrix::from_fn(8, 2, |_, _| 2.0 * standard_normal(&mut rng));
        let (vecs, labels) = sample_planted(&mut rng, &u, 0.5, 100, 10);
        let tr = train_plda_em(
            &vecs,
            &labels,
            &PldaConfig {
                rank: 2,
                iters: 10,
                seed: 1,
            },
        )
        .unwrap();
        let angle = largest_principal_angle_deg(&tr.model.between, &u);
        assert!(angle < 5.0, "angle {angle}");
        for w in tr.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{:?}", tr.log_likelihoods);
        }
    }

    #[test]
    fn zero_rank_gives_total_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vecs: Vec<_> = (0..40)
            .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let labels: Vec<_> = (0..40).map(|i| format!("s{}", i % 4)).collect();
        let tr = train_plda_em(&vecs, &labels, &PldaConfig { rank: 0, iters: 3, seed: 0 }).unwrap();
        let mean = vecs.iter().fold(DVector::zeros(3), |a, v| a + v) / 40.0;
        let mut cov = DMatrix::zeros(3, 3);
        for v in &vecs {
            cov += (v - &mean) * (v - &mean).transpose();
        }
        cov /= 40.0;
        assert!((&tr.model.within - cov).amax() < 1e-12);
        assert_eq!(tr.model.subspace_rank(), 0);
    }

    #[test]
    fn single_speaker_is_rejected() {
        let vecs = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])];
        let labels = vec!["a".to_string(); 2];
        assert!(matches!(
            train_plda_em(&vecs, &labels, &PldaConfig { rank: 1, iters: 1, seed: 0 }),
            Err(Error::Precondition(_))
        ));
    }

    fn random_model(rng: &mut ChaCha8Rng, r: usize, q: usize) -> PldaModel {
        let a = DMatrix::from_fn(r, r, |_, _| rng.random_range(-0.5..0.5));
        PldaModel::new(
            DVector::from_fn(r, |_, _| rng.random_range(-0.2..0.2)),
            DMatrix::from_fn(r, q, |_, _| rng.random_range(-1.0..1.0)),
            &a * a.transpose() + DMatrix::identity(r, r) * 0.3,
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_subspace_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = random_model(&mut rng, 4, 2);
        m = PldaModel::new(m.mean.clone(), DMatrix::zeros(4, 2), m.within.clone(), None).unwrap();
        for _ in 0..10 {
            let a = IVector::new("a", DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0)));
            let b = IVector::new("b", DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0)));
            assert_eq!(score_llr(&m, &a, &b).unwrap(), 0.0);
        }
    }

    #[test]
    fn scoring_is_exactly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_model(&mut rng, 5, 3);
        for _ in 0..50 {
            let a = IVector::new("a", DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0)));
            let b = IVector::new("b", DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0)));
            assert_eq!(score_llr(&m, &a, &b).unwrap(), score_llr(&m, &b, &a).unwrap());
        }
        let short = IVector::new("c", DVector::zeros(4));
        assert!(matches!(score_llr(&m, &short, &short), Err(Error::Dimension(_))));
    }

    #[test]
    fn closed_form_matches_joint_gaussian_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(&mut rng, 3, 2);
        let b = &m.between * m.between.transpose();
        let t = &b + &m.within;
        let log_n = |x: &DVector<f64>, cov: &DMatrix<f64>| {
            let k = x.len() as f64;
            let inv = cov.clone().try_inverse().unwrap();
            -0.5 * (k * LN_2PI + cov.determinant().ln() + (x.transpose() * inv * x)[(0, 0)])
        };
        for _ in 0..5 {
            let a = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let c = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let mut joint = DMatrix::zeros(6, 6);
            joint.view_mut((0, 0), (3, 3)).copy_from(&t);
            joint.view_mut((3, 3), (3, 3)).copy_from(&t);
            joint.view_mut((0, 3), (3, 3)).copy_from(&b);
            joint.view_mut((3, 0), (3, 3)).copy_from(&b);
            let am = &a - &m.mean;
            let cm = &c - &m.mean;
            let stacked = DVector::from_iterator(6, am.iter().chain(cm.iter()).copied());
            let expect = log_n(&stacked, &joint) - log_n(&am, &t) - log_n(&cm, &t);
            let got = score_llr(&m, &IVector::new("a", a), &IVector::new("c", c)).unwrap();
            assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        }
    }

    #[test]
    fn model_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 3, 1)
            .with_preprocessing(Some(Preprocessor {
                mean: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
                lda: Some(DMatrix::from_fn(4, 3, |i, j| (i + j) as f64)),
            }))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pld");
        m.write(&p).unwrap();
        assert_eq!(PldaModel::read(&p).unwrap(), m);
    }
}
