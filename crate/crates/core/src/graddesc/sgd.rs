//! Momentum SGD with weight decay and a log-linear learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::error::{Error, Result};
use crate::params::Parameters;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global L2 norm above which the gradient is rescaled; `0` disables clipping.
    pub clip_norm: f64,
    /// Length of the learning-rate schedule.
    pub steps: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr_start: 1e-3,
            lr_end: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            clip_norm: 10.0,
            steps: 200,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < lr_end <= lr_start, got {} and {}",
                self.lr_end, self.lr_start
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config(
                "weight decay and clip norm must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// `lr_start · (lr_end / lr_start)^(step / (steps − 1))`, held at `lr_end` afterwards.
    pub fn lr(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.lr_start;
        }
        let t = (step as f64 / (self.steps - 1) as f64).min(1.0);
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

/// Momentum buffers (same layout as the parameters) and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub velocity: AttentionParams,
    pub step: usize,
}

impl SgdState {
    pub fn new(params: &AttentionParams) -> Self {
        SgdState {
            velocity: params.zeros_like(),
            step: 0,
        }
    }
}

/// Rescales `grad` to at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut AttentionParams, max_norm: f64) -> f64 {
    let norm = grad.norm();
    if max_norm > 0.0 && norm > max_norm {
        grad.scale(max_norm / norm);
    }
    norm
}

/// `v ← μv + g + λp`, `p ← p − lr·v`. Returns the learning rate used.
pub fn sgd_step(
    params: &mut AttentionParams,
    grad: &AttentionParams,
    st: &mut SgdState,
    cfg: &SgdConfig,
) -> Result<f64> {
    for s in grad.named() {
        if let Some(i) = s.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training {
                param: s.name,
                message: format!("non-finite gradient at index {i}"),
            });
        }
    }
    let lr = cfg.lr(st.step);
    let grads = grad.named();
    let velocity = st.velocity.named_mut();
    for ((p, v), g) in params.named_mut().into_iter().zip(velocity).zip(grads) {
        debug_assert_eq!(p.name, g.name);
        for ((pv, vv), gv) in p.data.iter_mut().zip(v.data.iter_mut()).zip(g.data) {
            *vv = cfg.momentum * *vv + gv + cfg.weight_decay * *pv;
            *pv -= lr * *vv;
        }
    }
    st.step += 1;
    Ok(lr)
}
