//! AdamW with decoupled weight decay.
//!
//! Parameters whose gradient was never touched during the step are left
//! completely untouched, including their decay term; this is what lets
//! ablations like `recon_off` guarantee the decoder never moves.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::network::{Param, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Optional cosine decay of the learning rate over the run. Off by
    /// default; the reference setup trains at a constant rate.
    #[serde(default)]
    pub cosine_decay: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.05,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            cosine_decay: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct MomentPair {
    m: Array2<f64>,
    v: Array2<f64>,
}

/// Per-parameter first/second moment state plus the step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub config: OptimConfig,
    step: u64,
    moments: Vec<MomentPair>,
}

impl AdamW {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step at learning-rate multiplier `lr_scale`
    /// (1.0 for the constant schedule).
    pub fn step(&mut self, params: &mut dyn ParamSet, lr_scale: f64) {
        self.step += 1;
        let t = self.step as f64;
        let cfg = self.config;
        let lr = cfg.lr * lr_scale;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let mut idx = 0;
        let moments = &mut self.moments;
        params.visit_params(&mut |p: &mut Param| {
            if idx >= moments.len() {
                moments.push(MomentPair {
                    m: Array2::zeros(p.value.raw_dim()),
                    v: Array2::zeros(p.value.raw_dim()),
                });
            }
            let state = &mut moments[idx];
            idx += 1;
            if !p.trainable {
                return;
            }
            let grad = match &p.grad {
                Some(g) => g,
                None => return,
            };
            state.m.zip_mut_with(grad, |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            state
                .v
                .zip_mut_with(grad, |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            let wd = if p.decay { cfg.weight_decay } else { 0.0 };
            ndarray::Zip::from(&mut p.value)
                .and(&state.m)
                .and(&state.v)
                .for_each(|w, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *w -= lr * (mhat / (vhat.sqrt() + cfg.eps) + wd * *w);
                });
        });
    }
}

/// Cosine learning-rate multiplier for epoch `t` out of `total`.
pub fn cosine_scale(epoch: usize, total: usize) -> f64 {
    if total <= 1 {
        return 1.0;
    }
    let progress = epoch as f64 / (total - 1) as f64;
    0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
