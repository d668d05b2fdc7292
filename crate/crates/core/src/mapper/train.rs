use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::adam::AdamState;
use super::layers::Layer;
use super::network::{build_decoder, build_encoder, Batch, Losses, MapperConfig, MapperMethod, MapperNetwork, NetRng, TrainingMeta};

/// A short-utterance i-vector with its long-utterance counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub short: DVector<f64>,
    pub long: DVector<f64>,
    pub phoneme: Option<DVector<f64>>,
}

impl TrainingPair {
    pub fn new(id: String, short: DVector<f64>, long: DVector<f64>, phoneme: Option<DVector<f64>>) -> Result<Self> {
        if short.len() != long.len() {
            return Err(Error::Dimension(format!(
                "{id}: short i-vector has {} dims, long has {}",
                short.len(),
                long.len()
            )));
        }
        if let Some(p) = &phoneme {
            if p.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Precondition(format!("{id}: phoneme vector entries must be >= 0")));
            }
        }
        Ok(Self { id, short, long, phoneme })
    }
}

/// Column-stacked training matrices.
pub(crate) struct PairData {
    pub short: DMatrix<f64>,
    pub long: DMatrix<f64>,
    pub phoneme: Option<DMatrix<f64>>,
}

impl PairData {
    pub fn new(pairs: &[TrainingPair]) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::Precondition("no training pairs".into()))?;
        let r = first.short.len();
        let pdim = first.phoneme.as_ref().map(|p| p.len());
        for p in pairs {
            if p.short.len() != r || p.long.len() != r {
                return Err(Error::Dimension(format!("{}: inconsistent i-vector dimension", p.id)));
            }
            if p.phoneme.as_ref().map(|v| v.len()) != pdim {
                return Err(Error::Dimension(format!("{}: inconsistent phoneme vector", p.id)));
            }
        }
        let n = pairs.len();
        let short = DMatrix::from_fn(r, n, |i, j| pairs[j].short[i]);
        let long = DMatrix::from_fn(r, n, |i, j| pairs[j].long[i]);
        let phoneme = pdim.map(|d| DMatrix::from_fn(d, n, |i, j| pairs[j].phoneme.as_ref().unwrap()[i]));
        Ok(Self { short, long, phoneme })
    }

    pub fn ivector_dim(&self) -> usize {
        self.short.nrows()
    }

    pub fn phoneme_dim(&self) -> usize {
        self.phoneme.as_ref().map_or(0, |p| p.nrows())
    }

    /// `[short; phoneme]`
    fn input(&self) -> DMatrix<f64> {
        match &self.phoneme {
            None => self.short.clone(),
            Some(p) => stack(&[&self.short, p]),
        }
    }
}

fn stack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts[0].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.nrows()).copy_from(*p);
        at += p.nrows();
    }
    out
}

/// Result of a training run: the network plus the per-step loss trace
/// (pre-training steps first).
#[derive(Clone, Debug)]
pub struct MapperTraining {
    pub net: MapperNetwork,
    pub trace: Vec<Losses>,
    pub pretrain_steps: usize,
}

impl MapperTraining {
    /// CSV `step,loss_total,loss_regression,loss_reconstruction`.
    pub fn write_curve(&self, path: &Path) -> Result<()> {
        write_training_curve(path, &self.trace)
    }
}

pub fn write_training_curve(path: &Path, trace: &[Losses]) -> Result<()> {
    let mut out = String::from("step,loss_total,loss_regression,loss_reconstruction\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(out, "{},{:.16e},{:.16e},{:.16e}", i + 1, l.total, l.regression, l.reconstruction);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn gather(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Minibatch Adam on `(input -> target [, reconstruction])` with per-epoch shuffling.
fn optimise(
    net: &mut MapperNetwork,
    input: &DMatrix<f64>,
    target: &DMatrix<f64>,
    recon: Option<&DMatrix<f64>>,
    alpha: f64,
    iters: usize,
    cfg: &MapperConfig,
    mut rng: ChaCha8Rng,
) -> Result<Vec<Losses>> {
    let n = input.ncols();
    if n < 2 && iters > 0 {
        return Err(Error::Precondition("mapper training needs at least two pairs".into()));
    }
    let bs = cfg.batch_size.clamp(2, n.max(2));
    let mut adam = AdamState::new(&net.parameters(), cfg.learning_rate, cfg.lr_decay, cfg.decay_steps);
    let mut order: Vec<usize> = (0..n).collect();
    let mut pos = n;
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        if n - pos < 2 {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let end = (pos + bs).min(n);
        let idx = &order[pos..end];
        pos = end;
        let x = gather(input, idx);
        let y = gather(target, idx);
        let z = recon.map(|r| gather(r, idx));
        let batch = Batch {
            input: &x,
            target: &y,
            reconstruction_target: z.as_ref(),
        };
        let pass = net.pass(&batch, alpha, true)?;
        adam.update(net.parameters_mut(), &pass.grads)?;
        net.update_running(&pass, cfg.bn_momentum);
        trace.push(pass.losses);
    }
    Ok(trace)
}

fn shuffle_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

/// Supervised fitting of an existing network on `pairs` (regression target
/// the long i-vector, reconstruction target the short i-vector).
pub fn fit(
    net: &mut MapperNetwork,
    pairs: &[TrainingPair],
    cfg: &MapperConfig,
    alpha: f64,
    iters: usize,
    seed: u64,
) -> Result<Vec<Losses>> {
    let data = PairData::new(pairs)?;
    fit_data(net, &data, cfg, alpha, iters, seed)
}

fn fit_data(
    net: &mut MapperNetwork,
    data: &PairData,
    cfg: &MapperConfig,
    alpha: f64,
    iters: usize,
    seed: u64,
) -> Result<Vec<Losses>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Precondition(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if data.ivector_dim() != net.ivector_dim || data.phoneme_dim() != net.phoneme_dim {
        return Err(Error::Dimension(format!(
            "network expects {}+{} inputs, pairs provide {}+{}",
            net.ivector_dim,
            net.phoneme_dim,
            data.ivector_dim(),
            data.phoneme_dim()
        )));
    }
    let input = data.input();
    let recon = (!net.reconstruction.is_empty()).then_some(&data.short);
    optimise(net, &input, &data.long, recon, alpha, iters, cfg, shuffle_rng(seed, 1))
}

/// Joint regression + reconstruction training.
pub fn train_dnn2(
    pairs: &[TrainingPair],
    cfg: &MapperConfig,
    alpha: f64,
    iters: usize,
    seed: u64,
) -> Result<MapperTraining> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Precondition(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let data = PairData::new(pairs)?;
    let mut net = MapperNetwork::new_dnn2(data.ivector_dim(), data.phoneme_dim(), cfg, seed);
    let trace = fit_data(&mut net, &data, cfg, alpha, iters, seed)?;
    net.meta = TrainingMeta {
        method: MapperMethod::Dnn2,
        alpha,
        seed,
        pretrain_iters: 0,
        iters,
    };
    Ok(MapperTraining {
        net,
        trace,
        pretrain_steps: 0,
    })
}

/// Two-stage training: an autoencoder on `[short; phoneme; long]` whose
/// weights initialise the short-to-long regression, then supervised fine-tuning.
pub fn train_dnn1(
    pairs: &[TrainingPair],
    cfg: &MapperConfig,
    pretrain_iters: usize,
    finetune_iters: usize,
    seed: u64,
) -> Result<MapperTraining> {
    let data = PairData::new(pairs)?;
    let r = data.ivector_dim();
    let p = data.phoneme_dim();
    let (mut net, mut trace) = if pretrain_iters == 0 {
        (MapperNetwork::new_dnn1_regression(r, p, cfg, seed), Vec::new())
    } else {
        let mut rng = NetRng::new(seed);
        let mut ae = MapperNetwork {
            encoder: build_encoder(2 * r + p, cfg, &mut rng),
            regression: build_decoder(2 * r, cfg, &mut rng),
            reconstruction: Vec::new(),
            ivector_dim: 2 * r + p,
            phoneme_dim: 0,
            meta: TrainingMeta {
                method: MapperMethod::Dnn1,
                alpha: 0.0,
                seed,
                pretrain_iters,
                iters: 0,
            },
        };
        let input = match &data.phoneme {
            None => stack(&[&data.short, &data.long]),
            Some(ph) => stack(&[&data.short, ph, &data.long]),
        };
        let target = stack(&[&data.short, &data.long]);
        let trace = optimise(&mut ae, &input, &target, None, 0.0, pretrain_iters, cfg, shuffle_rng(seed, 2))?;
        let trace = trace
            .into_iter()
            .map(|l| Losses {
                total: l.total,
                regression: 0.0,
                reconstruction: l.regression,
            })
            .collect();
        (handoff(ae, r, p)?, trace)
    };
    let tuned = fit_data(&mut net, &data, cfg, 0.0, finetune_iters, seed)?;
    trace.extend(tuned);
    net.meta = TrainingMeta {
        method: MapperMethod::Dnn1,
        alpha: 0.0,
        seed,
        pretrain_iters,
        iters: finetune_iters,
    };
    Ok(MapperTraining {
        net,
        trace,
        pretrain_steps: pretrain_iters,
    })
}

/// Drop the long-half input columns of the first encoder layer (and of an
/// input batch norm) and keep only the long-half output rows of the decoder.
fn handoff(mut ae: MapperNetwork, r: usize, p: usize) -> Result<MapperNetwork> {
    let keep = r + p;
    let mut layers = ae.encoder.iter_mut();
    let mut first = layers.next();
    if let Some(Layer::BatchNorm(bn)) = first {
        bn.gamma = bn.gamma.rows(0, keep).into_owned();
        bn.beta = bn.beta.rows(0, keep).into_owned();
        bn.running_mean = bn.running_mean.rows(0, keep).into_owned();
        bn.running_var = bn.running_var.rows(0, keep).into_owned();
        first = layers.next();
    }
    match first {
        Some(Layer::Dense { w, .. }) => {
            *w = w.columns(0, keep).into_owned();
        }
        _ => return Err(Error::Precondition("encoder must start with a dense layer".into())),
    }
    match ae.regression.last_mut() {
        Some(Layer::Dense { w, b }) => {
            *w = w.rows(r, r).into_owned();
            if let Some(b) = b {
                *b = b.rows(r, r).into_owned();
            }
        }
        _ => return Err(Error::Precondition("decoder must end with a linear layer".into())),
    }
    ae.ivector_dim = r;
    ae.phoneme_dim = p;
    ae.check_chain()?;
    Ok(ae)
}

/// Inference-mode mean squared error of the mapped short i-vectors against
/// the long ones.
pub fn regression_mse(net: &MapperNetwork, pairs: &[TrainingPair]) -> Result<f64> {
    let data = PairData::new(pairs)?;
    let out = net.map_batch(&data.short, data.phoneme.as_ref())?;
    let diff = out - &data.long;
    Ok(diff.norm_squared() / diff.len() as f64)
}
