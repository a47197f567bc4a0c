//! Optimizers and the learning-rate schedule.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

/// `base · (1 − iter/max_iter)^power`, with `iter` clamped to `max_iter`.
pub fn poly_lr(base_lr: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    if max_iter == 0 {
        return base_lr;
    }
    let frac = iter.min(max_iter) as f64 / max_iter as f64;
    base_lr * libm::pow(1.0 - frac, power)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 2.5e-4, momentum: 0.9, weight_decay: 5e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.99, eps: 1e-8 }
    }
}

fn check(params: &[Tensor], grads: &[Tensor], state: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::shape("optimizer step", format!("{} params, {} grads", params.len(), grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dims() != g.dims() {
            return Err(Error::shape(
                "optimizer step",
                format!("gradient {i} has dims {:?}, param {:?}", g.dims(), p.dims()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
    }
    Ok(())
}

/// SGD with heavy-ball momentum and L2 weight decay added to the gradient.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sgd {
    pub config: SgdConfig,
    pub velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig, params: &[Tensor]) -> Self {
        Sgd { config, velocity: params.iter().map(|p| Tensor::zeros(p.dims())).collect() }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        check(params, grads, &self.velocity)?;
        let (mu, wd, lr) = (self.config.momentum as f32, self.config.weight_decay as f32, lr as f32);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let d = gi + wd * *pi;
                *vi = mu * *vi + d;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.dims())).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        check(params, grads, &self.m)?;
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = libm::sqrt(bc2) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.eps as f32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((pi, gi), (mi, vi)) in it {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *pi -= step_size * *mi / (libm::sqrtf(*vi) / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
