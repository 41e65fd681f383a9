use serde::{Deserialize, Serialize};

use super::{Gradients, LocalNetParams};
use crate::error::{FunadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Square-average decay.
    pub alpha: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            momentum: 0.2,
            alpha: 0.99,
            eps: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FunadError::arg("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.alpha) {
            return Err(FunadError::arg("momentum and alpha must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(FunadError::arg("eps must be positive"));
        }
        Ok(())
    }
}

/// RMSProp with a momentum buffer:
///
/// ```text
/// v <- alpha v + (1 - alpha) g^2
/// b <- momentum b + g / sqrt(v + eps)
/// p <- p - lr b
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    pub square_avg: LocalNetParams,
    pub momentum_buf: LocalNetParams,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, params: &LocalNetParams) -> Result<Self> {
        config.validate()?;
        let shape = params.shape();
        Ok(Self {
            config,
            square_avg: LocalNetParams::zeros(shape),
            momentum_buf: LocalNetParams::zeros(shape),
        })
    }

    pub fn step(&mut self, params: &mut LocalNetParams, grads: &Gradients) -> Result<()> {
        if params.shape() != grads.shape() || params.shape() != self.square_avg.shape() {
            return Err(FunadError::arg("optimizer / parameter / gradient shapes differ"));
        }
        let RmsPropConfig {
            lr,
            momentum,
            alpha,
            eps,
        } = self.config;
        let params = params.buffers_mut();
        let sq = self.square_avg.buffers_mut();
        let mb = self.momentum_buf.buffers_mut();
        for (((p, g), v), b) in params.into_iter().zip(grads.buffers()).zip(sq).zip(mb) {
            for k in 0..p.len() {
                v[k] = alpha * v[k] + (1.0 - alpha) * g[k] * g[k];
                b[k] = momentum * b[k] + g[k] / (v[k] + eps).sqrt();
                p[k] -= lr * b[k];
            }
        }
        Ok(())
    }
}
