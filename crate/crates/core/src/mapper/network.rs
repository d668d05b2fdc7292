use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::{Error, Result};

use super::layers::{
    backward_stack, forward_stack, relu_pattern, stack_out_dim, xavier_with, BatchNorm, Cache, Layer,
    LayerKind, Mode,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderDepth {
    /// Two fully-connected layers (input -> hidden -> bottleneck).
    Shallow,
    /// Input layer, two residual blocks, bottleneck layer.
    Deep,
}

impl std::str::FromStr for EncoderDepth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shallow" => Ok(Self::Shallow),
            "deep" => Ok(Self::Deep),
            other => Err(Error::Precondition(format!("encoder depth must be shallow or deep, got {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapperMethod {
    Dnn1,
    Dnn2,
}

impl std::str::FromStr for MapperMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dnn1" => Ok(Self::Dnn1),
            "dnn2" => Ok(Self::Dnn2),
            other => Err(Error::Precondition(format!("method must be dnn1 or dnn2, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapperConfig {
    pub hidden: usize,
    pub bottleneck: usize,
    pub depth: EncoderDepth,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_steps: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Batch-normalise the raw input features before the first dense layer.
    pub input_norm: bool,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            bottleneck: 64,
            depth: EncoderDepth::Shallow,
            batch_size: 256,
            learning_rate: 1e-3,
            lr_decay: 0.95,
            decay_steps: 1000,
            bn_momentum: 0.99,
            bn_eps: 1e-5,
            input_norm: true,
        }
    }
}

/// Training provenance stored with a network.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    pub method: MapperMethod,
    pub alpha: f64,
    pub seed: u64,
    pub pretrain_iters: usize,
    pub iters: usize,
}

/// Encoder with a regression branch and an optional reconstruction branch.
#[derive(Clone, Debug, PartialEq)]
pub struct MapperNetwork {
    pub encoder: Vec<Layer>,
    pub regression: Vec<Layer>,
    pub reconstruction: Vec<Layer>,
    /// i-vector part of the input.
    pub ivector_dim: usize,
    /// Phoneme-vector part of the input (0 when absent).
    pub phoneme_dim: usize,
    pub meta: TrainingMeta,
}

pub struct ForwardOutput {
    pub regression: DMatrix<f64>,
    pub reconstruction: Option<DMatrix<f64>>,
    pub bottleneck: DMatrix<f64>,
}

/// Loss values of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    pub total: f64,
    pub regression: f64,
    pub reconstruction: f64,
}

/// Targets for one batch: regression target and (optional) reconstruction target.
pub struct Batch<'a> {
    pub input: &'a DMatrix<f64>,
    pub target: &'a DMatrix<f64>,
    pub reconstruction_target: Option<&'a DMatrix<f64>>,
}

pub(crate) struct Pass {
    pub losses: Losses,
    pub grads: Vec<DMatrix<f64>>,
    enc: Vec<Cache>,
    reg: Vec<Cache>,
    rec: Vec<Cache>,
}

pub(crate) struct NetRng(ChaCha8Rng);

impl NetRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    fn weights(&mut self, in_dim: usize, out_dim: usize) -> DMatrix<f64> {
        xavier_with(in_dim, out_dim, &mut self.0)
    }
}

pub(crate) fn build_encoder(in_dim: usize, cfg: &MapperConfig, rng: &mut NetRng) -> Vec<Layer> {
    let (h, b, eps) = (cfg.hidden, cfg.bottleneck, cfg.bn_eps);
    let mut layers = Vec::new();
    if cfg.input_norm {
        layers.push(Layer::BatchNorm(BatchNorm::new(in_dim, eps)));
    }
    layers.extend([
        Layer::dense(rng.weights(in_dim, h)),
        Layer::BatchNorm(BatchNorm::new(h, eps)),
        Layer::Relu,
    ]);
    if cfg.depth == EncoderDepth::Deep {
        for _ in 0..2 {
            let w1 = rng.weights(h, h);
            let w2 = rng.weights(h, h);
            layers.push(Layer::residual_block(w1, w2, eps));
        }
    }
    // linear bottleneck
    layers.push(Layer::dense(rng.weights(h, b)));
    layers.push(Layer::BatchNorm(BatchNorm::new(b, eps)));
    layers
}

pub(crate) fn build_decoder(out_dim: usize, cfg: &MapperConfig, rng: &mut NetRng) -> Vec<Layer> {
    let (h, b, eps) = (cfg.hidden, cfg.bottleneck, cfg.bn_eps);
    vec![
        Layer::dense(rng.weights(b, h)),
        Layer::BatchNorm(BatchNorm::new(h, eps)),
        Layer::Relu,
        Layer::linear_output(rng.weights(h, out_dim)),
    ]
}

impl MapperNetwork {
    /// Joint regression + reconstruction network: linear regression head and
    /// a decoder reconstructing the short i-vector.
    pub fn new_dnn2(ivector_dim: usize, phoneme_dim: usize, cfg: &MapperConfig, seed: u64) -> Self {
        let mut rng = NetRng::new(seed);
        let encoder = build_encoder(ivector_dim + phoneme_dim, cfg, &mut rng);
        let regression = vec![Layer::linear_output(rng.weights(cfg.bottleneck, ivector_dim))];
        let reconstruction = build_decoder(ivector_dim, cfg, &mut rng);
        Self {
            encoder,
            regression,
            reconstruction,
            ivector_dim,
            phoneme_dim,
            meta: TrainingMeta {
                method: MapperMethod::Dnn2,
                alpha: 0.0,
                seed,
                pretrain_iters: 0,
                iters: 0,
            },
        }
    }

    /// Pure regression network with a decoder-shaped output branch.
    pub fn new_dnn1_regression(ivector_dim: usize, phoneme_dim: usize, cfg: &MapperConfig, seed: u64) -> Self {
        let mut rng = NetRng::new(seed);
        let encoder = build_encoder(ivector_dim + phoneme_dim, cfg, &mut rng);
        let regression = build_decoder(ivector_dim, cfg, &mut rng);
        Self {
            encoder,
            regression,
            reconstruction: Vec::new(),
            ivector_dim,
            phoneme_dim,
            meta: TrainingMeta {
                method: MapperMethod::Dnn1,
                alpha: 0.0,
                seed,
                pretrain_iters: 0,
                iters: 0,
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.ivector_dim + self.phoneme_dim
    }

    pub fn output_dim(&self) -> usize {
        stack_out_dim(&self.regression, self.bottleneck_dim())
    }

    pub fn bottleneck_dim(&self) -> usize {
        stack_out_dim(&self.encoder, self.input_dim())
    }

    pub fn reconstruction_dim(&self) -> Option<usize> {
        (!self.reconstruction.is_empty()).then(|| stack_out_dim(&self.reconstruction, self.bottleneck_dim()))
    }

    pub fn parameters(&self) -> Vec<&DMatrix<f64>> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.regression).chain(&self.reconstruction) {
            l.params(&mut out);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out = Vec::new();
        for l in self
            .encoder
            .iter_mut()
            .chain(self.regression.iter_mut())
            .chain(self.reconstruction.iter_mut())
        {
            l.params_mut(&mut out);
        }
        out
    }

    /// Index ranges into [`Self::parameters`] of the encoder, regression and
    /// reconstruction branches.
    pub fn parameter_groups(&self) -> [std::ops::Range<usize>; 3] {
        let count = |ls: &[Layer]| {
            let mut v = Vec::new();
            ls.iter().for_each(|l| l.params(&mut v));
            v.len()
        };
        let e = count(&self.encoder);
        let r = count(&self.regression);
        let a = count(&self.reconstruction);
        [0..e, e..e + r, e + r..e + r + a]
    }

    pub fn forward(&self, batch: &DMatrix<f64>, mode: Mode) -> Result<ForwardOutput> {
        let (out, _) = self.forward_cached(batch, mode)?;
        Ok(out)
    }

    fn forward_cached(&self, batch: &DMatrix<f64>, mode: Mode) -> Result<(ForwardOutput, [Vec<Cache>; 3])> {
        if batch.nrows() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "mapper expects {} input dims, got {}",
                self.input_dim(),
                batch.nrows()
            )));
        }
        let (h, enc) = forward_stack(&self.encoder, batch.clone(), mode)?;
        let (y, reg) = forward_stack(&self.regression, h.clone(), mode)?;
        let (z, rec) = if self.reconstruction.is_empty() {
            (None, Vec::new())
        } else {
            let (z, c) = forward_stack(&self.reconstruction, h.clone(), mode)?;
            (Some(z), c)
        };
        if y.iter().chain(z.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mapper activations".into()));
        }
        Ok((
            ForwardOutput {
                regression: y,
                reconstruction: z,
                bottleneck: h,
            },
            [enc, reg, rec],
        ))
    }

    /// Train-mode loss `(1 - alpha) L_r + alpha L_a` and its exact gradients.
    pub(crate) fn pass(&self, batch: &Batch, alpha: f64, want_grads: bool) -> Result<Pass> {
        let (out, [enc, reg, rec]) = self.forward_cached(batch.input, Mode::Train)?;
        if out.regression.shape() != batch.target.shape() {
            return Err(Error::Dimension(format!(
                "regression output {:?} vs target {:?}",
                out.regression.shape(),
                batch.target.shape()
            )));
        }
        let diff_r = &out.regression - batch.target;
        let loss_r = diff_r.norm_squared() / diff_r.len() as f64;
        let (loss_a, diff_a) = match (&out.reconstruction, batch.reconstruction_target) {
            (Some(z), Some(t)) => {
                if z.shape() != t.shape() {
                    return Err(Error::Dimension(format!(
                        "reconstruction output {:?} vs target {:?}",
                        z.shape(),
                        t.shape()
                    )));
                }
                let d = z - t;
                (d.norm_squared() / d.len() as f64, Some(d))
            }
            (None, None) => (0.0, None),
            _ => {
                return Err(Error::Precondition(
                    "reconstruction target must be given exactly when the network has a decoder".into(),
                ))
            }
        };
        let total = (1.0 - alpha) * loss_r + alpha * loss_a;
        if !total.is_finite() {
            return Err(Error::NonFinite("mapper loss".into()));
        }
        let losses = Losses {
            total,
            regression: loss_r,
            reconstruction: loss_a,
        };
        let mut grads = Vec::new();
        if want_grads {
            let dy = diff_r * (2.0 * (1.0 - alpha) / (out.regression.len() as f64));
            let (mut dh, g_reg) = backward_stack(&self.regression, &reg, dy);
            let g_rec = match diff_a {
                Some(d) => {
                    let n = d.len() as f64;
                    let (dh_a, g) = backward_stack(&self.reconstruction, &rec, d * (2.0 * alpha / n));
                    dh += dh_a;
                    g
                }
                None => Vec::new(),
            };
            let (_, g_enc) = backward_stack(&self.encoder, &enc, dh);
            grads = g_enc.into_iter().chain(g_reg).chain(g_rec).collect();
        }
        Ok(Pass {
            losses,
            grads,
            enc,
            reg,
            rec,
        })
    }

    pub(crate) fn update_running(&mut self, pass: &Pass, momentum: f64) {
        for (l, c) in self.encoder.iter_mut().zip(&pass.enc) {
            l.update_running(c, momentum);
        }
        for (l, c) in self.regression.iter_mut().zip(&pass.reg) {
            l.update_running(c, momentum);
        }
        for (l, c) in self.reconstruction.iter_mut().zip(&pass.rec) {
            l.update_running(c, momentum);
        }
    }

    pub(crate) fn relu_pattern(pass: &Pass) -> Vec<bool> {
        let mut out = Vec::new();
        relu_pattern(&pass.enc, &mut out);
        relu_pattern(&pass.reg, &mut out);
        relu_pattern(&pass.rec, &mut out);
        out
    }

    /// Train-mode losses and gradients in [`Self::parameters`] order.
    pub fn gradients(&self, batch: &Batch, alpha: f64) -> Result<(Losses, Vec<DMatrix<f64>>)> {
        let p = self.pass(batch, alpha, true)?;
        Ok((p.losses, p.grads))
    }

    /// Map short i-vectors (columns of `ivectors`) with inference-mode statistics.
    pub fn map_batch(&self, ivectors: &DMatrix<f64>, phonemes: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        let input = self.assemble_input(ivectors, phonemes)?;
        Ok(self.forward(&input, Mode::Infer)?.regression)
    }

    pub(crate) fn assemble_input(&self, ivectors: &DMatrix<f64>, phonemes: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        if ivectors.nrows() != self.ivector_dim {
            return Err(Error::Dimension(format!(
                "mapper expects {}-dim i-vectors, got {}",
                self.ivector_dim,
                ivectors.nrows()
            )));
        }
        match (phonemes, self.phoneme_dim) {
            (None, 0) => Ok(ivectors.clone()),
            (Some(p), pd) if pd > 0 => {
                if p.nrows() != pd || p.ncols() != ivectors.ncols() {
                    return Err(Error::Dimension(format!(
                        "mapper expects {pd}-dim phoneme vectors for {} samples, got {}x{}",
                        ivectors.ncols(),
                        p.nrows(),
                        p.ncols()
                    )));
                }
                let mut x = DMatrix::zeros(self.input_dim(), ivectors.ncols());
                x.rows_mut(0, self.ivector_dim).copy_from(ivectors);
                x.rows_mut(self.ivector_dim, pd).copy_from(p);
                Ok(x)
            }
            (Some(_), _) => Err(Error::Dimension(
                "phoneme vector supplied to a mapper trained without one".into(),
            )),
            (None, pd) => Err(Error::Dimension(format!(
                "mapper was trained with {pd}-dim phoneme vectors but none was supplied"
            ))),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        binio::write_magic(&mut w, b"NET1")?;
        binio::write_u8(&mut w, matches!(self.meta.method, MapperMethod::Dnn2) as u8)?;
        binio::write_f64(&mut w, self.meta.alpha)?;
        binio::write_u64(&mut w, self.meta.seed)?;
        binio::write_u32(&mut w, self.meta.pretrain_iters)?;
        binio::write_u32(&mut w, self.meta.iters)?;
        binio::write_u32(&mut w, self.ivector_dim)?;
        binio::write_u32(&mut w, self.phoneme_dim)?;
        let mut in_dim = self.input_dim();
        write_stack(&mut w, &self.encoder, in_dim)?;
        in_dim = self.bottleneck_dim();
        write_stack(&mut w, &self.regression, in_dim)?;
        write_stack(&mut w, &self.reconstruction, in_dim)?;
        binio::flush(w, path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        binio::expect_magic(&mut r, b"NET1")?;
        let method = if binio::read_u8(&mut r)? == 1 { MapperMethod::Dnn2 } else { MapperMethod::Dnn1 };
        let alpha = binio::read_f64(&mut r)?;
        let seed = binio::read_u64(&mut r)?;
        let pretrain_iters = binio::read_u32(&mut r)?;
        let iters = binio::read_u32(&mut r)?;
        let ivector_dim = binio::read_u32(&mut r)?;
        let phoneme_dim = binio::read_u32(&mut r)?;
        let encoder = read_stack(&mut r)?;
        let regression = read_stack(&mut r)?;
        let reconstruction = read_stack(&mut r)?;
        let net = Self {
            encoder,
            regression,
            reconstruction,
            ivector_dim,
            phoneme_dim,
            meta: TrainingMeta {
                method,
                alpha,
                seed,
                pretrain_iters,
                iters,
            },
        };
        net.check_chain()?;
        Ok(net)
    }

    /// Verify that layer dimensions chain and parameters are finite.
    pub fn check_chain(&self) -> Result<()> {
        let mut d = self.input_dim();
        let chain = |layers: &[Layer], mut d: usize| -> Result<usize> {
            for l in layers {
                let s = l.spec(d);
                if s.in_dim != d {
                    return Err(Error::Format(format!("layer expects {} inputs but receives {d}", s.in_dim)));
                }
                d = s.out_dim;
            }
            Ok(d)
        };
        d = chain(&self.encoder, d)?;
        chain(&self.regression, d)?;
        chain(&self.reconstruction, d)?;
        if self.parameters().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }
}

fn write_stack(w: &mut impl std::io::Write, layers: &[Layer], mut in_dim: usize) -> Result<()> {
    binio::write_u32(w, layers.len())?;
    for l in layers {
        let spec = l.spec(in_dim);
        binio::write_u8(w, spec.kind.tag())?;
        binio::write_u32(w, spec.in_dim)?;
        binio::write_u32(w, spec.out_dim)?;
        match l {
            Layer::Dense { w: m, b } => {
                binio::write_matrix_f64(w, m)?;
                if let Some(b) = b {
                    binio::write_matrix_f64(w, b)?;
                }
            }
            Layer::BatchNorm(bn) => {
                binio::write_f64(w, bn.eps)?;
                binio::write_matrix_f64(w, &bn.gamma)?;
                binio::write_matrix_f64(w, &bn.beta)?;
                binio::write_vector_f64(w, &bn.running_mean)?;
                binio::write_vector_f64(w, &bn.running_var)?;
            }
            Layer::Relu => {}
            Layer::Residual(inner) => write_stack(w, inner, in_dim)?,
        }
        in_dim = spec.out_dim;
    }
    Ok(())
}

fn read_stack(r: &mut impl std::io::Read) -> Result<Vec<Layer>> {
    let n = binio::read_u32(r)?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = LayerKind::from_tag(binio::read_u8(r)?)?;
        let in_dim = binio::read_u32(r)?;
        let out_dim = binio::read_u32(r)?;
        layers.push(match kind {
            LayerKind::Dense => Layer::dense(binio::read_matrix_f64(r, out_dim, in_dim)?),
            LayerKind::LinearOutput => Layer::Dense {
                w: binio::read_matrix_f64(r, out_dim, in_dim)?,
                b: Some(binio::read_matrix_f64(r, out_dim, 1)?),
            },
            LayerKind::BatchNorm => {
                let eps = binio::read_f64(r)?;
                let bn = BatchNorm {
                    eps,
                    gamma: binio::read_matrix_f64(r, out_dim, 1)?,
                    beta: binio::read_matrix_f64(r, out_dim, 1)?,
                    running_mean: binio::read_vector_f64(r, out_dim)?,
                    running_var: binio::read_vector_f64(r, out_dim)?,
                };
                if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::Format("batch-norm running variance must be positive".into()));
                }
                Layer::BatchNorm(bn)
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::ResidualBlock => {
                let inner = read_stack(r)?;
                if in_dim != out_dim {
                    return Err(Error::Format("residual block must preserve dimension".into()));
                }
                Layer::Residual(inner)
            }
        });
    }
    Ok(layers)
}

/// Map one short i-vector.
pub fn map_ivector(
    net: &MapperNetwork,
    short: &DVector<f64>,
    phoneme: Option<&super::PhonemeVector>,
) -> Result<DVector<f64>> {
    let x = DMatrix::from_column_slice(short.len(), 1, short.as_slice());
    let p = phoneme.map(|p| DMatrix::from_column_slice(p.values.len(), 1, p.values.as_slice()));
    let y = net.map_batch(&x, p.as_ref())?;
    Ok(y.column(0).into_owned())
}
