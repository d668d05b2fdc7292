use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{forward_stack, BatchNorm, Layer, Mode};
use super::*;

fn tiny_config(depth: EncoderDepth) -> MapperConfig {
    MapperConfig {
        hidden: 8,
        bottleneck: 5,
        depth,
        batch_size: 4,
        ..MapperConfig::default()
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_pairs(seed: u64, n: usize, r: usize, phoneme: Option<usize>) -> Vec<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = random_matrix(&mut rng, r, r) * 0.5;
    (0..n)
        .map(|i| {
            let long = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
            let short = &mix * &long + DVector::from_fn(r, |_, _| 0.3 * rng.random_range(-1.0..1.0));
            let ph = phoneme.map(|c| {
                let v = DVector::from_fn(c, |_, _| rng.random::<f64>());
                let s = v.sum();
                v * (5.0 / s)
            });
            TrainingPair::new(format!("p{i}-seg000"), short, long, ph).unwrap()
        })
        .collect()
}

/// Straight-line forward pass written with scalar loops.
fn oracle_forward(layers: &[Layer], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut h: Vec<Vec<f64>> = (0..x.ncols()).map(|j| x.column(j).iter().copied().collect()).collect();
    for l in layers {
        h = oracle_layer(l, h);
    }
    let rows = h[0].len();
    DMatrix::from_fn(rows, h.len(), |i, j| h[j][i])
}

fn oracle_layer(l: &Layer, h: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    match l {
        Layer::Dense { w, b } => h
            .iter()
            .map(|x| {
                (0..w.nrows())
                    .map(|i| {
                        let mut s = b.as_ref().map_or(0.0, |b| b[(i, 0)]);
                        for (k, xk) in x.iter().enumerate() {
                            s += w[(i, k)] * xk;
                        }
                        s
                    })
                    .collect()
            })
            .collect(),
        Layer::BatchNorm(bn) => {
            let n = h.len() as f64;
            let d = h[0].len();
            let mut out = h.clone();
            for i in 0..d {
                let mean = h.iter().map(|x| x[i]).sum::<f64>() / n;
                let var = h.iter().map(|x| (x[i] - mean) * (x[i] - mean)).sum::<f64>() / n;
                for (j, x) in h.iter().enumerate() {
                    out[j][i] = bn.gamma[(i, 0)] * (x[i] - mean) / (var + bn.eps).sqrt() + bn.beta[(i, 0)];
                }
            }
            out
        }
        Layer::Relu => h.into_iter().map(|x| x.into_iter().map(|v| v.max(0.0)).collect()).collect(),
        Layer::Residual(inner) => {
            let mut f = h.clone();
            for l in inner {
                f = oracle_layer(l, f);
            }
            f.iter().zip(&h).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
        }
    }
}

fn zero_out(layers: &mut [Layer]) {
    for l in layers {
        match l {
            Layer::Dense { w, b } => {
                w.fill(0.0);
                if let Some(b) = b {
                    b.fill(0.0);
                }
            }
            Layer::BatchNorm(bn) => bn.beta.fill(0.0),
            Layer::Residual(inner) => zero_out(inner),
            Layer::Relu => {}
        }
    }
}

#[test]
fn zero_network_outputs_zero() {
    let mut net = MapperNetwork::new_dnn2(4, 0, &tiny_config(EncoderDepth::Deep), 1);
    zero_out(&mut net.encoder);
    zero_out(&mut net.regression);
    zero_out(&mut net.reconstruction);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_matrix(&mut rng, 4, 6);
    for mode in [Mode::Train, Mode::Infer] {
        let out = net.forward(&x, mode).unwrap();
        assert!(out.regression.iter().all(|&v| v == 0.0));
        assert!(out.reconstruction.unwrap().iter().all(|&v| v == 0.0));
    }
    let y = map_ivector(&net, &DVector::from_element(4, 3.0), None).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn zeroed_residual_block_is_identity() {
    let mut block = vec![Layer::residual_block(DMatrix::zeros(6, 6), DMatrix::zeros(6, 6), 1e-5)];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(&mut rng, 6, 9) * 10.0;
    for mode in [Mode::Train, Mode::Infer] {
        let (y, _) = forward_stack(&block, x.clone(), mode).unwrap();
        assert_eq!(y, x);
    }
    zero_out(&mut block);
    let (y, _) = forward_stack(&block, x.clone(), Mode::Train).unwrap();
    assert_eq!(y, x);
}

#[test]
fn forward_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bn = BatchNorm::new(7, 1e-5);
    bn.gamma = random_matrix(&mut rng, 7, 1);
    bn.beta = random_matrix(&mut rng, 7, 1);
    let layers = vec![
        Layer::dense(random_matrix(&mut rng, 7, 5)),
        Layer::BatchNorm(bn),
        Layer::Relu,
        Layer::residual_block(random_matrix(&mut rng, 7, 7), random_matrix(&mut rng, 7, 7), 1e-5),
        Layer::Dense {
            w: random_matrix(&mut rng, 3, 7),
            b: Some(random_matrix(&mut rng, 3, 1)),
        },
    ];
    let x = random_matrix(&mut rng, 5, 11);
    let (y, _) = forward_stack(&layers, x.clone(), Mode::Train).unwrap();
    let expect = oracle_forward(&layers, &x);
    assert!((y - expect).amax() < 1e-10);
}

#[test]
fn forward_errors() {
    let net = MapperNetwork::new_dnn2(4, 0, &tiny_config(EncoderDepth::Shallow), 1);
    assert!(matches!(
        net.forward(&DMatrix::zeros(3, 4), Mode::Infer),
        Err(crate::Error::Dimension(_))
    ));
    assert!(matches!(
        net.forward(&DMatrix::zeros(4, 1), Mode::Train),
        Err(crate::Error::Precondition(_))
    ));
    assert!(net.forward(&DMatrix::zeros(4, 1), Mode::Infer).is_ok());
}

#[test]
fn gradients_match_finite_differences() {
    for depth in [EncoderDepth::Shallow, EncoderDepth::Deep] {
        for alpha in [0.0, 0.5, 1.0] {
            for seed in 0..4 {
                let cfg = tiny_config(depth);
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let net = MapperNetwork::new_dnn2(4, 2, &cfg, seed);
                let x = random_matrix(&mut rng, 6, 4);
                let y = random_matrix(&mut rng, 4, 4);
                let z = x.rows(0, 4).into_owned();
                let batch = Batch {
                    input: &x,
                    target: &y,
                    reconstruction_target: Some(&z),
                };
                let rep = check_gradients(&net, &batch, alpha, 1e-5, 1e-4).unwrap();
                assert!(rep.passes(1e-4, 2.0), "{depth:?} alpha={alpha} seed={seed}: {rep:?}");
                assert!(rep.checked > rep.skipped);
            }
        }
    }
}

#[test]
fn loss_weight_zero_gives_exactly_zero_branch_gradients() {
    let cfg = tiny_config(EncoderDepth::Shallow);
    let net = MapperNetwork::new_dnn2(4, 0, &cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_matrix(&mut rng, 4, 6);
    let y = random_matrix(&mut rng, 4, 6);
    let batch = Batch {
        input: &x,
        target: &y,
        reconstruction_target: Some(&x),
    };
    let [_, reg, rec] = net.parameter_groups();
    let (_, g1) = net.gradients(&batch, 1.0).unwrap();
    assert!(g1[reg.clone()].iter().all(|g| g.iter().all(|&v| v == 0.0)));
    assert!(g1[rec.clone()].iter().any(|g| g.iter().any(|&v| v != 0.0)));
    let (_, g0) = net.gradients(&batch, 0.0).unwrap();
    assert!(g0[rec.clone()].iter().all(|g| g.iter().all(|&v| v == 0.0)));
    let (_, gh) = net.gradients(&batch, 0.5).unwrap();
    assert!(gh[reg].iter().any(|g| g.iter().any(|&v| v != 0.0)));
    assert!(gh[rec].iter().any(|g| g.iter().any(|&v| v != 0.0)));
}

#[test]
fn xavier_bounds_variance_and_determinism() {
    let w = xavier_init(300, 200, 9);
    let bound = (6.0f64 / 500.0).sqrt();
    assert!(w.iter().all(|&v| v.abs() <= bound));
    let n = w.len() as f64;
    let mean = w.sum() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let expect = 2.0 / 500.0;
    assert!((var - expect).abs() < 0.05 * expect, "{var} vs {expect}");
    assert_eq!(w, xavier_init(300, 200, 9));
}

#[test]
fn alpha_one_freezes_regression_head() {
    let pairs = random_pairs(1, 40, 4, None);
    let cfg = tiny_config(EncoderDepth::Shallow);
    let init = MapperNetwork::new_dnn2(4, 0, &cfg, 8);
    let trained = train_dnn2(&pairs, &cfg, 1.0, 30, 8).unwrap().net;
    assert_eq!(trained.regression, init.regression);
    assert_ne!(trained.encoder, init.encoder);
    assert!(train_dnn2(&pairs, &cfg, 1.5, 1, 0).is_err());
}

#[test]
fn dnn1_without_pretraining_equals_direct_regression() {
    let pairs = random_pairs(2, 30, 4, Some(3));
    let cfg = tiny_config(EncoderDepth::Deep);
    let a = train_dnn1(&pairs, &cfg, 0, 25, 4).unwrap();
    let mut direct = MapperNetwork::new_dnn1_regression(4, 3, &cfg, 4);
    let trace = fit(&mut direct, &pairs, &cfg, 0.0, 25, 4).unwrap();
    assert_eq!(a.trace, trace);
    assert_eq!(a.net.encoder, direct.encoder);
    assert_eq!(a.net.regression, direct.regression);
}

#[test]
fn dnn1_memorises_a_single_repeated_pair() {
    let one = random_pairs(3, 1, 4, None).remove(0);
    let pairs = vec![one.clone(); 8];
    let cfg = MapperConfig {
        learning_rate: 1e-2,
        ..tiny_config(EncoderDepth::Shallow)
    };
    let tr = train_dnn1(&pairs, &cfg, 50, 1500, 5).unwrap();
    let last = tr.trace.last().unwrap();
    assert!(last.regression < 1e-4, "{last:?}");
}

#[test]
fn pretraining_loss_decreases() {
    let pairs = random_pairs(4, 64, 4, None);
    let cfg = MapperConfig {
        batch_size: 64,
        ..tiny_config(EncoderDepth::Shallow)
    };
    let tr = train_dnn1(&pairs, &cfg, 100, 0, 6).unwrap();
    assert_eq!(tr.pretrain_steps, 100);
    let rec: Vec<f64> = tr.trace.iter().map(|l| l.reconstruction).collect();
    for w in rec.windows(2) {
        assert!(w[1] < w[0], "{rec:?}");
    }
}

#[test]
fn training_is_deterministic_and_round_trips() {
    let pairs = random_pairs(5, 50, 4, Some(3));
    let cfg = MapperConfig {
        batch_size: 16,
        ..tiny_config(EncoderDepth::Deep)
    };
    let a = train_dnn2(&pairs, &cfg, 0.5, 40, 11).unwrap();
    let b = train_dnn2(&pairs, &cfg, 0.5, 40, 11).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.trace, b.trace);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.net");
    a.net.write(&path).unwrap();
    let back = MapperNetwork::read(&path).unwrap();
    assert_eq!(back, a.net);
    let curve = dir.path().join("curve.csv");
    a.write_curve(&curve).unwrap();
    let text = std::fs::read_to_string(curve).unwrap();
    assert!(text.starts_with("step,loss_total,loss_regression,loss_reconstruction\n"));
    assert_eq!(text.lines().count(), 41);
}

#[test]
fn inference_has_no_cross_sample_dependence() {
    let pairs = random_pairs(6, 40, 4, None);
    let cfg = tiny_config(EncoderDepth::Deep);
    let net = train_dnn2(&pairs, &cfg, 0.5, 30, 2).unwrap().net;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_matrix(&mut rng, 4, 5);
    let together = net.map_batch(&x, None).unwrap();
    for j in 0..5 {
        let single = map_ivector(&net, &x.column(j).into_owned(), None).unwrap();
        assert_eq!(single, together.column(j).into_owned());
    }
}

#[test]
fn phoneme_presence_must_match_training() {
    let cfg = tiny_config(EncoderDepth::Shallow);
    let plain = MapperNetwork::new_dnn2(4, 0, &cfg, 0);
    let ph = PhonemeVector { values: DVector::from_element(3, 1.0) };
    let w = DVector::zeros(4);
    assert!(matches!(map_ivector(&plain, &w, Some(&ph)), Err(crate::Error::Dimension(_))));
    let aug = MapperNetwork::new_dnn2(4, 3, &cfg, 0);
    assert!(matches!(map_ivector(&aug, &w, None), Err(crate::Error::Dimension(_))));
    assert!(map_ivector(&aug, &w, Some(&ph)).is_ok());
}
