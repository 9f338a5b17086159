//! Learning-rate schedule, Adam and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Log-linear decay from `lr_init` to `lr_final` over the run, multiplied by a
/// linear ramp `min(1, step / warmup)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub iterations: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub warmup: usize,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.warmup {
            return Err(Error::InvalidArgument(format!(
                "iterations ({}) must exceed warmup ({})",
                self.iterations, self.warmup
            )));
        }
        if !(self.lr_final > 0.0 && self.lr_init >= self.lr_final && self.lr_init.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need lr_init >= lr_final > 0, got {} and {}",
                self.lr_init, self.lr_final
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        self.validate()?;
        if step >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "step {step} outside schedule of {} iterations",
                self.iterations
            )));
        }
        let s = step as f64 / self.iterations as f64;
        let base = ((1.0 - s) * self.lr_init.ln() + s * self.lr_final.ln()).exp();
        let ramp = if self.warmup == 0 {
            1.0
        } else {
            (step as f64 / self.warmup as f64).min(1.0)
        };
        Ok(base * ramp)
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.squared_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_in_place(k);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
        }
    }
}

/// Bias-corrected Adam: `θ -= lr · m̂ / (sqrt(v̂) + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real> {
    pub hyper: AdamHyper,
    pub steps: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(hyper: AdamHyper, params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            hyper,
            steps: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::LengthMismatch {
                op: "adam_step",
                left: params.len(),
                right: grads.len(),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }
        self.steps += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i].f64();
                let mi = beta1 * m[i].f64() + (1.0 - beta1) * gi;
                let vi = beta2 * v[i].f64() + (1.0 - beta2) * gi * gi;
                m[i] = T::of(mi);
                v[i] = T::of(vi);
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                p[i] = T::of(p[i].f64() - update);
            }
        }
        Ok(())
    }
}
