use nalgebra::DMatrix;

use crate::{Error, Result};

/// Adam with bias correction and an exponentially decaying step size
/// `base * decay^(step / decay_steps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<DMatrix<f64>>,
    pub second_moment: Vec<DMatrix<f64>>,
    pub step: u64,
    pub base_lr: f64,
    pub decay: f64,
    pub decay_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&DMatrix<f64>], base_lr: f64, decay: f64, decay_steps: usize) -> Self {
        let zeros: Vec<DMatrix<f64>> = params.iter().map(|p| DMatrix::zeros(p.nrows(), p.ncols())).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            base_lr,
            decay,
            decay_steps: decay_steps.max(1),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Step size used for update number `step` (counting from zero).
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.base_lr * self.decay.powf(step as f64 / self.decay_steps as f64)
    }

    pub fn update(&mut self, params: Vec<&mut DMatrix<f64>>, grads: &[DMatrix<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Dimension(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        let lr = self.learning_rate(self.step);
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
