//! Global-norm gradient clipping followed by an AdamW step.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub clip_eps: f64,
    pub lr: f64,
    /// Maximum global gradient norm.
    pub grad_clip: f64,
    pub entropy_coef: f64,
    pub kl_coef: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            clip_eps: 0.2,
            lr: 1e-3,
            grad_clip: 1.0,
            entropy_coef: 1e-3,
            kl_coef: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            adam_eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    /// Learning rate suited to a large pretrained backbone.
    pub fn large_model() -> Self {
        OptimizerConfig { lr: 1e-6, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let fin = |v: f64| v.is_finite();
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(format!("clip_eps {} outside (0, 1)", self.clip_eps));
        }
        if !(fin(self.lr) && self.lr > 0.0) {
            return Err("lr must be positive".into());
        }
        if !(fin(self.grad_clip) && self.grad_clip > 0.0) {
            return Err("grad_clip must be positive".into());
        }
        for (name, v) in
            [("entropy_coef", self.entropy_coef), ("kl_coef", self.kl_coef), ("weight_decay", self.weight_decay)]
        {
            if !(fin(v) && v >= 0.0) {
                return Err(format!("{name} must be non-negative"));
            }
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err("adam betas must lie in [0, 1)".into());
        }
        if !(fin(self.adam_eps) && self.adam_eps > 0.0) {
            return Err("adam_eps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UpdateError {
    #[error("gradient has {0} non-finite entries; step skipped")]
    NonFinite(usize),
    #[error("shape mismatch: {params} params, {grad} gradient entries, {state} optimizer entries")]
    Shape { params: usize, grad: usize, state: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateReport {
    /// Norm before clipping.
    pub grad_norm: f64,
    /// Norm of the gradient actually fed to Adam.
    pub applied_norm: f64,
}

/// Clips `grad` to `cfg.grad_clip` in global norm, then takes one AdamW step
/// on `params`. On error nothing is modified.
pub fn update(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    cfg: &OptimizerConfig,
) -> Result<UpdateReport, UpdateError> {
    if params.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(UpdateError::Shape { params: params.len(), grad: grad.len(), state: state.m.len() });
    }
    let bad = grad.iter().filter(|g| !g.is_finite()).count();
    if bad > 0 {
        tracing::warn!(non_finite = bad, "rejecting update");
        return Err(UpdateError::NonFinite(bad));
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = if norm > cfg.grad_clip { cfg.grad_clip / norm } else { 1.0 };
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad[i] * scale;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let step = (state.m[i] / bc1) / ((state.v[i] / bc2).sqrt() + cfg.adam_eps);
        params[i] -= cfg.lr * (step + cfg.weight_decay * params[i]);
    }
    Ok(UpdateReport { grad_norm: norm, applied_norm: norm * scale })
}
