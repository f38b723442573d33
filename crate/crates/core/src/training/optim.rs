//! Adaptive-moment optimizer with optional global-norm gradient clipping.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 norm cap on the gradient; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 5.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation("optimizer.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("optimizer.beta", "betas must lie in [0, 1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::validation("optimizer.eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.clip_norm >= 0.0) {
            return Err(Error::validation("optimizer", "weight_decay and clip_norm must be >= 0"));
        }
        Ok(())
    }
}

pub struct Adam {
    config: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Array2<f64>]) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `grads[i] = None` means the tensor did not take part.
    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &mut [Option<Array2<f64>>]) {
        let c = self.config;
        if c.clip_norm > 0.0 {
            let norm = grads
                .iter()
                .flatten()
                .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > c.clip_norm {
                let scale = c.clip_norm / norm;
                for g in grads.iter_mut().flatten() {
                    g.mapv_inplace(|x| x * scale);
                }
            }
        }
        self.t += 1;
        let step = c.lr / (1.0 - c.beta1.powi(self.t as i32));
        let inv_sqrt_bc2 = 1.0 / (1.0 - c.beta2.powi(self.t as i32)).sqrt();
        let (b1, b2, wd, eps) = (c.beta1, c.beta2, c.weight_decay, c.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = g else { continue };
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                let g = g + wd * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            };
            match (p.as_slice_mut(), g.as_slice(), m.as_slice_mut(), v.as_slice_mut()) {
                (Some(p), Some(g), Some(m), Some(v)) => {
                    for i in 0..p.len() {
                        update(&mut p[i], g[i], &mut m[i], &mut v[i]);
                    }
                }
                _ => Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| update(p, g, m, v)),
            }
        }
    }
}
