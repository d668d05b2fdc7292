#[path = "common/oracles.rs"]
mod oracles;

use oracles::{ivector_log_posterior, llr_by_quadrature, newton_maximise};
use ivmap_core::{
    accumulate_stats, center_stats, extract_ivector, score_llr, FeatureSequence, FullGmm, IVector, PldaModel,
    TotalVariabilityModel, VadMask,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spd(rng: &mut ChaCha8Rng, d: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
    &a * a.transpose() + DMatrix::identity(d, d) * ridge
}

#[test]
fn ivector_matches_numerical_posterior_maximisation() {
    for (seed, rank) in [(1u64, 1usize), (2, 2), (3, 3), (4, 3)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, d, frames) = (3, 2, 40);
        let means = DMatrix::from_fn(c, d, |_, _| rng.random_range(-2.0..2.0));
        let covs: Vec<_> = (0..c).map(|_| spd(&mut rng, d, 0.4)).collect();
        let ubm = FullGmm::new(DVector::from_element(c, 1.0 / c as f64), means.clone(), covs.clone(), false).unwrap();
        let t = DMatrix::from_fn(c * d, rank, |_, _| rng.random_range(-1.0..1.0));
        let tv = TotalVariabilityModel::new(t.clone(), means.clone(), covs.clone()).unwrap();
        let x = DMatrix::from_fn(frames, d, |_, _| rng.random_range(-3.0..3.0));
        let mut resp = DMatrix::from_fn(frames, c, |_, _| rng.random_range(0.0..1.0));
        for mut row in resp.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        let seq = FeatureSequence::new("u", x.clone(), None).unwrap();
        let stats = accumulate_stats(&resp, &seq, &VadMask::all_speech(frames)).unwrap();
        let iv = extract_ivector(&center_stats(&stats, &ubm).unwrap(), &tv).unwrap();
        let f = |w: &DVector<f64>| ivector_log_posterior(w, &x, &resp, &means, &covs, &t);
        let w = newton_maximise(&f, DVector::zeros(rank), 4);
        let err = (&w - &iv.mean).amax();
        assert!(err <= 1e-6, "rank {rank}: {err:e}");
    }
}

#[test]
fn llr_matches_quadrature() {
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
        let r = 2;
        let mean = DVector::from_fn(r, |_, _| rng.random_range(-0.3..0.3));
        let u = DVector::from_fn(r, |_, _| rng.random_range(-1.5..1.5));
        let within = spd(&mut rng, r, 0.3);
        let model = PldaModel::new(mean.clone(), DMatrix::from_column_slice(r, 1, u.as_slice()), within.clone(), None)
            .unwrap();
        for _ in 0..5 {
            let a = DVector::from_fn(r, |_, _| rng.random_range(-2.5..2.5));
            let b = DVector::from_fn(r, |_, _| rng.random_range(-2.5..2.5));
            let got = score_llr(&model, &IVector::new("a", a.clone()), &IVector::new("b", b.clone())).unwrap();
            let expect = llr_by_quadrature(&mean, &u, &within, &a, &b);
            assert!((got - expect).abs() <= 1e-6, "{got} vs {expect}");
        }
    }
}
