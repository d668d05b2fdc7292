use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Forward pass mode: batch statistics in training, running statistics at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    ResidualBlock,
    BatchNorm,
    Relu,
    LinearOutput,
}

impl LayerKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Self::Dense => 0,
            Self::ResidualBlock => 1,
            Self::BatchNorm => 2,
            Self::Relu => 3,
            Self::LinearOutput => 4,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => Self::Dense,
            1 => Self::ResidualBlock,
            2 => Self::BatchNorm,
            3 => Self::Relu,
            4 => Self::LinearOutput,
            _ => return Err(Error::Format(format!("unknown layer tag {t}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Uniform Xavier weights (`out x in`) on `+-sqrt(6 / (in + out))`.
pub fn xavier_init(in_dim: usize, out_dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_with(in_dim, out_dim, &mut rng)
}

pub(crate) fn xavier_with(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
    // filled row by row so the draw order follows the stored layout
    let mut w = DMatrix::zeros(out_dim, in_dim);
    for i in 0..out_dim {
        for j in 0..in_dim {
            w[(i, j)] = rng.random_range(-bound..bound);
        }
    }
    w
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(dim: usize, eps: f64) -> Self {
        Self {
            gamma: DMatrix::from_element(dim, 1, 1.0),
            beta: DMatrix::zeros(dim, 1),
            running_mean: DVector::zeros(dim),
            running_var: DVector::from_element(dim, 1.0),
            eps,
        }
    }
}

/// A network layer. Batches are `dim x batch`, one sample per column.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `y = W x (+ b)`; a bias marks a linear output layer.
    Dense {
        w: DMatrix<f64>,
        b: Option<DMatrix<f64>>,
    },
    BatchNorm(BatchNorm),
    Relu,
    /// `y = x + F(x)` with `F` a stack of inner layers.
    Residual(Vec<Layer>),
}

pub(crate) enum Cache {
    Dense { x: DMatrix<f64> },
    BatchNorm { xhat: DMatrix<f64>, inv_std: DVector<f64>, mean: DVector<f64>, var: DVector<f64> },
    Relu { active: DMatrix<bool> },
    Residual(Vec<Cache>),
}

impl Layer {
    pub fn dense(w: DMatrix<f64>) -> Self {
        Layer::Dense { w, b: None }
    }

    pub fn linear_output(w: DMatrix<f64>) -> Self {
        let rows = w.nrows();
        Layer::Dense {
            w,
            b: Some(DMatrix::zeros(rows, 1)),
        }
    }

    /// Two dense layers with batch norm and a ReLU between them, plus the short-cut.
    pub fn residual_block(w1: DMatrix<f64>, w2: DMatrix<f64>, eps: f64) -> Self {
        let d = w1.nrows();
        Layer::Residual(vec![
            Layer::dense(w1),
            Layer::BatchNorm(BatchNorm::new(d, eps)),
            Layer::Relu,
            Layer::dense(w2),
            Layer::BatchNorm(BatchNorm::new(d, eps)),
        ])
    }

    pub fn spec(&self, in_dim: usize) -> LayerSpec {
        match self {
            Layer::Dense { w, b } => LayerSpec {
                kind: if b.is_some() { LayerKind::LinearOutput } else { LayerKind::Dense },
                in_dim: w.ncols(),
                out_dim: w.nrows(),
            },
            Layer::BatchNorm(bn) => LayerSpec {
                kind: LayerKind::BatchNorm,
                in_dim: bn.gamma.nrows(),
                out_dim: bn.gamma.nrows(),
            },
            Layer::Relu => LayerSpec {
                kind: LayerKind::Relu,
                in_dim,
                out_dim: in_dim,
            },
            Layer::Residual(_) => LayerSpec {
                kind: LayerKind::ResidualBlock,
                in_dim,
                out_dim: in_dim,
            },
        }
    }

    pub(crate) fn params<'a>(&'a self, out: &mut Vec<&'a DMatrix<f64>>) {
        match self {
            Layer::Dense { w, b } => {
                out.push(w);
                if let Some(b) = b {
                    out.push(b);
                }
            }
            Layer::BatchNorm(bn) => {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
            Layer::Relu => {}
            Layer::Residual(inner) => inner.iter().for_each(|l| l.params(out)),
        }
    }

    pub(crate) fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut DMatrix<f64>>) {
        match self {
            Layer::Dense { w, b } => {
                out.push(w);
                if let Some(b) = b {
                    out.push(b);
                }
            }
            Layer::BatchNorm(bn) => {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
            Layer::Relu => {}
            Layer::Residual(inner) => inner.iter_mut().for_each(|l| l.params_mut(out)),
        }
    }

    pub(crate) fn forward(&self, x: DMatrix<f64>, mode: Mode) -> Result<(DMatrix<f64>, Cache)> {
        match self {
            Layer::Dense { w, b } => {
                if x.nrows() != w.ncols() {
                    return Err(Error::Dimension(format!(
                        "dense layer expects {} inputs, got {}",
                        w.ncols(),
                        x.nrows()
                    )));
                }
                let mut y = w * &x;
                if let Some(b) = b {
                    for mut col in y.column_iter_mut() {
                        col += b.column(0);
                    }
                }
                Ok((y, Cache::Dense { x }))
            }
            Layer::BatchNorm(bn) => batch_norm_forward(bn, x, mode),
            Layer::Relu => {
                let active = x.map(|v| v > 0.0);
                let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
                Ok((y, Cache::Relu { active }))
            }
            Layer::Residual(inner) => {
                let mut caches = Vec::with_capacity(inner.len());
                let mut h = x.clone();
                for l in inner {
                    let (out, c) = l.forward(h, mode)?;
                    caches.push(c);
                    h = out;
                }
                Ok((h + x, Cache::Residual(caches)))
            }
        }
    }

    /// Gradient w.r.t. the input, with parameter gradients appended in `params` order.
    pub(crate) fn backward(&self, cache: &Cache, dy: DMatrix<f64>, grads: &mut Vec<DMatrix<f64>>) -> DMatrix<f64> {
        match (self, cache) {
            (Layer::Dense { w, b }, Cache::Dense { x }) => {
                grads.push(&dy * x.transpose());
                if b.is_some() {
                    let db = DMatrix::from_fn(dy.nrows(), 1, |i, _| dy.row(i).sum());
                    grads.push(db);
                }
                w.transpose() * dy
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, .. }) => {
                let n = dy.ncols() as f64;
                let (rows, cols) = dy.shape();
                let mut dgamma = DMatrix::zeros(rows, 1);
                let mut dbeta = DMatrix::zeros(rows, 1);
                let mut dx = DMatrix::zeros(rows, cols);
                for i in 0..rows {
                    let g = bn.gamma[(i, 0)];
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    let mut sum_dy = 0.0;
                    let mut sum_dyx = 0.0;
                    for j in 0..cols {
                        let d = dy[(i, j)] * g;
                        sum_d += d;
                        sum_dx += d * xhat[(i, j)];
                        sum_dy += dy[(i, j)];
                        sum_dyx += dy[(i, j)] * xhat[(i, j)];
                    }
                    dgamma[(i, 0)] = sum_dyx;
                    dbeta[(i, 0)] = sum_dy;
                    for j in 0..cols {
                        let d = dy[(i, j)] * g;
                        dx[(i, j)] = inv_std[i] / n * (n * d - sum_d - xhat[(i, j)] * sum_dx);
                    }
                }
                grads.push(dgamma);
                grads.push(dbeta);
                dx
            }
            (Layer::Relu, Cache::Relu { active }) => {
                dy.zip_map(active, |d, a| if a { d } else { 0.0 })
            }
            (Layer::Residual(inner), Cache::Residual(caches)) => {
                let mut local: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(inner.len());
                let mut d = dy.clone();
                for (l, c) in inner.iter().zip(caches).rev() {
                    let mut g = Vec::new();
                    d = l.backward(c, d, &mut g);
                    local.push(g);
                }
                grads.extend(local.into_iter().rev().flatten());
                d + dy
            }
            _ => unreachable!("cache does not match layer"),
        }
    }

    /// Fold this layer's batch statistics into its running averages.
    pub(crate) fn update_running(&mut self, cache: &Cache, momentum: f64) {
        match (self, cache) {
            (Layer::BatchNorm(bn), Cache::BatchNorm { mean, var, xhat, .. }) => {
                let n = xhat.ncols() as f64;
                let unbiased = var * (n / (n - 1.0));
                bn.running_mean = &bn.running_mean * momentum + mean * (1.0 - momentum);
                bn.running_var = &bn.running_var * momentum + unbiased * (1.0 - momentum);
            }
            (Layer::Residual(inner), Cache::Residual(caches)) => {
                for (l, c) in inner.iter_mut().zip(caches) {
                    l.update_running(c, momentum);
                }
            }
            _ => {}
        }
    }
}

fn batch_norm_forward(bn: &BatchNorm, x: DMatrix<f64>, mode: Mode) -> Result<(DMatrix<f64>, Cache)> {
    let (rows, cols) = x.shape();
    if rows != bn.gamma.nrows() {
        return Err(Error::Dimension(format!(
            "batch norm expects {} features, got {rows}",
            bn.gamma.nrows()
        )));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if cols < 2 {
                return Err(Error::Precondition(
                    "training-mode batch norm needs a batch of at least 2".into(),
                ));
            }
            let n = cols as f64;
            let mean = DVector::from_fn(rows, |i, _| x.row(i).sum() / n);
            let var = DVector::from_fn(rows, |i, _| {
                x.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / n
            });
            (mean, var)
        }
        Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.map(|v| 1.0 / (v + bn.eps).sqrt());
    let xhat = DMatrix::from_fn(rows, cols, |i, j| (x[(i, j)] - mean[i]) * inv_std[i]);
    let y = DMatrix::from_fn(rows, cols, |i, j| bn.gamma[(i, 0)] * xhat[(i, j)] + bn.beta[(i, 0)]);
    Ok((y, Cache::BatchNorm { xhat, inv_std, mean, var }))
}

/// Run a stack of layers, keeping the caches.
pub(crate) fn forward_stack(layers: &[Layer], x: DMatrix<f64>, mode: Mode) -> Result<(DMatrix<f64>, Vec<Cache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x;
    for l in layers {
        let (y, c) = l.forward(h, mode)?;
        caches.push(c);
        h = y;
    }
    Ok((h, caches))
}

pub(crate) fn backward_stack(
    layers: &[Layer],
    caches: &[Cache],
    dy: DMatrix<f64>,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let mut per_layer: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(layers.len());
    let mut d = dy;
    for (l, c) in layers.iter().zip(caches).rev() {
        let mut g = Vec::new();
        d = l.backward(c, d, &mut g);
        per_layer.push(g);
    }
    (d, per_layer.into_iter().rev().flatten().collect())
}

/// Sign pattern of every ReLU input in a stack, used to detect kinks.
pub(crate) fn relu_pattern(caches: &[Cache], out: &mut Vec<bool>) {
    for c in caches {
        match c {
            Cache::Relu { active } => out.extend(active.iter().copied()),
            Cache::Residual(inner) => relu_pattern(inner, out),
            _ => {}
        }
    }
}

pub(crate) fn stack_out_dim(layers: &[Layer], in_dim: usize) -> usize {
    layers.iter().fold(in_dim, |d, l| l.spec(d).out_dim)
}
