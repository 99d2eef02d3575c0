use serde::{Deserialize, Serialize};

use super::layers::Parameter;
use super::tensor::Scalar;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of every parameter for step `t` (1-based); gradients are
/// zeroed afterwards.
///
/// All gradients are checked before any value is touched, so a non-finite gradient
/// leaves the parameters unchanged.
pub fn adam_step<T: Scalar>(params: &mut [&mut Parameter<T>], cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("adam step counter starts at 1"));
    }
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of parameter `{}`", p.name)));
    }
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    // lr * m̂ / (sqrt(v̂) + eps) with m̂ = m / bc1, v̂ = v / bc2
    let step = T::from_f64(cfg.lr / bc1);
    let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
    let eps = T::from_f64(cfg.eps);
    for p in params.iter_mut() {
        let Parameter {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = &mut **p;
        for (((x, g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .zip(adam_m.data_mut().iter_mut())
            .zip(adam_v.data_mut().iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * *g;
            *v = b2 * *v + (T::one() - b2) * *g * *g;
            *x = *x - step * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            *g = T::zero();
        }
    }
    Ok(())
}

/// Adam with its own step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, t: 0 }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        adam_step(params, &self.cfg, self.t + 1)?;
        self.t += 1;
        Ok(())
    }
}
