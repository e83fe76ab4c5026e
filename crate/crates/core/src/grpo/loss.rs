//! Token-level clipped surrogate with optional entropy and KL terms.

use super::{OptimizerConfig, ScoredGroup};
use crate::policy::{encode_obs, PolicyParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("step {step} of trajectory {trajectory} in group {group}: {tokens} tokens but {logprobs} old logprobs")]
    Misaligned { group: usize, trajectory: usize, step: usize, tokens: usize, logprobs: usize },
    #[error("group {group}: {advantages} advantages for {trajectories} trajectories")]
    Advantages { group: usize, advantages: usize, trajectories: usize },
    #[error("reference policy has a different vocabulary or feature map")]
    Reference,
    #[error("invalid token sequence: {0}")]
    Policy(#[from] crate::policy::PolicyError),
}

#[derive(Clone, Debug)]
pub struct LossReport {
    /// Total objective: clipped surrogate, minus entropy bonus, plus KL.
    pub loss: f64,
    /// Clipped surrogate part alone.
    pub pg_loss: f64,
    /// Mean per-token entropy of the new policy.
    pub entropy: f64,
    /// Mean per-token KL(new || reference).
    pub kl: f64,
    pub tokens: usize,
    /// Tokens whose ratio fell in the inactive clip region.
    pub clipped_tokens: usize,
    /// Gradient of `loss` with respect to the policy weights.
    pub grad: Vec<f64>,
}

/// Clipped surrogate over a batch of scored groups.
///
/// `L = -(1/N) sum_tokens min(r A, clip(r, 1-e, 1+e) A)
///      - entropy_coef (1/N) sum_tokens H + kl_coef (1/N) sum_tokens KL`,
/// with `r = exp(new - old)`, `A` the trajectory's advantage and `N` the
/// total token count of the batch. Old log-probabilities are the ones stored
/// in each step. The KL term needs `reference`; without one it is skipped.
pub fn surrogate_loss(
    groups: &[ScoredGroup],
    params: &PolicyParams,
    reference: Option<&PolicyParams>,
    cfg: &OptimizerConfig,
) -> Result<LossReport, LossError> {
    if let Some(r) = reference {
        if r.vocab != params.vocab || r.features != params.features {
            return Err(LossError::Reference);
        }
    }
    let mut n_tokens = 0usize;
    for (gi, g) in groups.iter().enumerate() {
        if g.advantages.len() != g.group.trajectories.len() {
            return Err(LossError::Advantages {
                group: gi,
                advantages: g.advantages.len(),
                trajectories: g.group.trajectories.len(),
            });
        }
        for (ti, t) in g.group.trajectories.iter().enumerate() {
            for (si, s) in t.steps.iter().enumerate() {
                if s.tokens.len() != s.logprobs.len() {
                    return Err(LossError::Misaligned {
                        group: gi,
                        trajectory: ti,
                        step: si,
                        tokens: s.tokens.len(),
                        logprobs: s.logprobs.len(),
                    });
                }
                n_tokens += s.tokens.len();
            }
        }
    }

    let mut grad = vec![0.0; params.len()];
    let mut report = LossReport {
        loss: 0.0,
        pg_loss: 0.0,
        entropy: 0.0,
        kl: 0.0,
        tokens: n_tokens,
        clipped_tokens: 0,
        grad: Vec::new(),
    };
    if n_tokens == 0 {
        report.grad = grad;
        return Ok(report);
    }
    let inv_n = 1.0 / n_tokens as f64;
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let use_kl = reference.is_some() && cfg.kl_coef != 0.0;

    for g in groups {
        for (t, &adv) in g.group.trajectories.iter().zip(&g.advantages) {
            let mut history = Vec::with_capacity(t.steps.len());
            for s in &t.steps {
                let f = encode_obs(&params.features, &s.observation, &t.instruction, &history);
                history.push(s.action.clone());
                let positions = params.positions(&f, &s.tokens)?;
                let ref_positions = match reference {
                    Some(r) if use_kl => Some(r.positions(&f, &s.tokens)?),
                    _ => None,
                };
                for (i, pos) in positions.iter().enumerate() {
                    let tok = s.tokens[i];
                    let logp = pos.log_probs();
                    let chosen = pos.index_of(tok).expect("positions validated the sequence");
                    let ratio = (logp[chosen] - s.logprobs[i]).exp();
                    let unclipped = ratio * adv;
                    let clipped = ratio.clamp(lo, hi) * adv;
                    report.pg_loss -= unclipped.min(clipped) * inv_n;
                    // d/dlogp of the min is r A when the unclipped arm is the
                    // minimum; otherwise the ratio is outside the clip range
                    // and the clipped arm is constant.
                    let active = unclipped <= clipped;
                    if !active {
                        report.clipped_tokens += 1;
                    }
                    if pos.legal.len() == 1 {
                        continue;
                    }
                    let mut d = vec![0.0; pos.legal.len()];
                    if active && adv != 0.0 {
                        let c = -unclipped * inv_n;
                        for (j, p) in pos.probs.iter().enumerate() {
                            d[j] += c * (f64::from(u8::from(j == chosen)) - p);
                        }
                    }
                    let h = pos.entropy();
                    report.entropy += h * inv_n;
                    if cfg.entropy_coef != 0.0 {
                        for (j, p) in pos.probs.iter().enumerate() {
                            // dH/dz_j = -p_j (log p_j + H)
                            d[j] -= cfg.entropy_coef * inv_n * (-p * (logp[j] + h));
                        }
                    }
                    if let Some(refs) = &ref_positions {
                        let logq = refs[i].log_probs();
                        let kl: f64 = pos.probs.iter().enumerate().map(|(j, p)| p * (logp[j] - logq[j])).sum();
                        report.kl += kl * inv_n;
                        for (j, p) in pos.probs.iter().enumerate() {
                            // dKL/dz_j = p_j ((log p_j - log q_j) - KL)
                            d[j] += cfg.kl_coef * inv_n * p * ((logp[j] - logq[j]) - kl);
                        }
                    }
                    params.backprop(pos, &d, 1.0, &mut grad);
                }
            }
        }
    }
    report.loss =
        report.pg_loss - cfg.entropy_coef * report.entropy + if use_kl { cfg.kl_coef * report.kl } else { 0.0 };
    report.grad = grad;
    Ok(report)
}
