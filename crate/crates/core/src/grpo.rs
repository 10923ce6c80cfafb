//! Token-level clipped policy objective with a KL penalty, normalized by the
//! total number of agent-action tokens in the group, plus a small softmax
//! policy used to check its gradient numerically.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Log-probabilities of one trajectory's agent-action tokens under the
/// current, old and reference policies, and the trajectory's advantage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTokens {
    pub logp_current: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub advantage: f64,
}

impl ActionTokens {
    pub fn len(&self) -> usize {
        self.logp_current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp_current.is_empty()
    }

    fn aligned(&self) -> bool {
        self.logp_old.len() == self.logp_current.len() && self.logp_ref.len() == self.logp_current.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            kl_beta: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectiveError {
    #[error("group contains no action tokens")]
    NoTokens,
    #[error("trajectory {0}: log-probability lists differ in length")]
    Misaligned(usize),
    #[error("trajectory {0}: token ({1}, {2}) outside the policy table")]
    OutOfTable(usize, usize, usize),
    #[error("invalid policy table")]
    InvalidTable,
}

/// Total number of action tokens across the group.
pub fn normalization_factor(group: &[ActionTokens]) -> usize {
    group.iter().map(ActionTokens::len).sum()
}

/// `min(r * a, clamp(r, 1 - eps, 1 + eps) * a)`.
pub fn clipped_term(ratio: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let clamped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (ratio * advantage).min(clamped * advantage)
}

/// `exp(lr - lc) - (lr - lc) - 1`, which is never negative.
pub fn kl_penalty(logp_current: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_current;
    libm::exp(d) - d - 1.0
}

fn token_term(lc: f64, lo: f64, lr: f64, advantage: f64, params: &ObjectiveParams) -> f64 {
    let ratio = libm::exp(lc - lo);
    clipped_term(ratio, advantage, params.clip_epsilon) - params.kl_beta * kl_penalty(lc, lr)
}

/// Derivative of one token's term with respect to its current log-probability.
fn token_term_slope(lc: f64, lo: f64, lr: f64, advantage: f64, params: &ObjectiveParams) -> f64 {
    let ratio = libm::exp(lc - lo);
    let clamped = ratio.clamp(1.0 - params.clip_epsilon, 1.0 + params.clip_epsilon);
    let surrogate = if ratio * advantage <= clamped * advantage {
        advantage * ratio
    } else {
        0.0
    };
    surrogate - params.kl_beta * (1.0 - libm::exp(lr - lc))
}

fn check(group: &[ActionTokens]) -> Result<usize, ObjectiveError> {
    if let Some(i) = group.iter().position(|t| !t.aligned()) {
        return Err(ObjectiveError::Misaligned(i));
    }
    match normalization_factor(group) {
        0 => Err(ObjectiveError::NoTokens),
        z => Ok(z),
    }
}

/// Mean per-token term over every action token of the group.
pub fn objective(group: &[ActionTokens], params: &ObjectiveParams) -> Result<f64, ObjectiveError> {
    let z = check(group)?;
    let mut total = 0.0;
    for t in group {
        for j in 0..t.len() {
            total += token_term(t.logp_current[j], t.logp_old[j], t.logp_ref[j], t.advantage, params);
        }
    }
    Ok(total / z as f64)
}

/// One sampled token of a toy trajectory: the context it was drawn in, the
/// token id, and its fixed old and reference log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyToken {
    pub context: usize,
    pub token: usize,
    pub logp_old: f64,
    pub logp_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrajectory {
    pub tokens: Vec<ToyToken>,
    pub advantage: f64,
}

/// Softmax policy over a small vocabulary, one logit row per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    logits: Vec<Vec<f64>>,
}

impl ToyPolicy {
    pub fn new(logits: Vec<Vec<f64>>) -> Result<Self, ObjectiveError> {
        let width = logits.first().map_or(0, Vec::len);
        if width == 0 || logits.iter().any(|row| row.len() != width || row.iter().any(|x| !x.is_finite())) {
            return Err(ObjectiveError::InvalidTable);
        }
        Ok(Self { logits })
    }

    pub fn contexts(&self) -> usize {
        self.logits.len()
    }

    pub fn vocab(&self) -> usize {
        self.logits[0].len()
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    fn log_normalizer(&self, context: usize) -> f64 {
        let row = &self.logits[context];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>())
    }

    pub fn log_prob(&self, context: usize, token: usize) -> f64 {
        self.logits[context][token] - self.log_normalizer(context)
    }

    pub fn probabilities(&self, context: usize) -> Vec<f64> {
        let z = self.log_normalizer(context);
        self.logits[context].iter().map(|x| libm::exp(x - z)).collect()
    }

    fn validate(&self, group: &[ToyTrajectory]) -> Result<(), ObjectiveError> {
        for (i, t) in group.iter().enumerate() {
            if let Some(tok) = t
                .tokens
                .iter()
                .find(|k| k.context >= self.contexts() || k.token >= self.vocab())
            {
                return Err(ObjectiveError::OutOfTable(i, tok.context, tok.token));
            }
        }
        Ok(())
    }

    /// Log-probability records of `trajectory` under this policy.
    pub fn action_tokens(&self, trajectory: &ToyTrajectory) -> ActionTokens {
        ActionTokens {
            logp_current: trajectory
                .tokens
                .iter()
                .map(|k| self.log_prob(k.context, k.token))
                .collect(),
            logp_old: trajectory.tokens.iter().map(|k| k.logp_old).collect(),
            logp_ref: trajectory.tokens.iter().map(|k| k.logp_ref).collect(),
            advantage: trajectory.advantage,
        }
    }

    pub fn objective(&self, group: &[ToyTrajectory], params: &ObjectiveParams) -> Result<f64, ObjectiveError> {
        self.validate(group)?;
        let records: Vec<ActionTokens> = group.iter().map(|t| self.action_tokens(t)).collect();
        objective(&records, params)
    }

    /// Analytic gradient of the objective with respect to every logit.
    pub fn gradient(&self, group: &[ToyTrajectory], params: &ObjectiveParams) -> Result<Vec<Vec<f64>>, ObjectiveError> {
        self.validate(group)?;
        let z: usize = group.iter().map(|t| t.tokens.len()).sum();
        if z == 0 {
            return Err(ObjectiveError::NoTokens);
        }
        let probs: Vec<Vec<f64>> = (0..self.contexts()).map(|c| self.probabilities(c)).collect();
        let mut grad = alloc::vec![alloc::vec![0.0; self.vocab()]; self.contexts()];
        for t in group {
            for k in &t.tokens {
                let lc = self.log_prob(k.context, k.token);
                let slope = token_term_slope(lc, k.logp_old, k.logp_ref, t.advantage, params);
                if slope == 0.0 {
                    continue;
                }
                // d log p(token | c) / d logit[c][v] = 1[v == token] - p(v | c)
                for (v, g) in grad[k.context].iter_mut().enumerate() {
                    let indicator = if v == k.token { 1.0 } else { 0.0 };
                    *g += slope * (indicator - probs[k.context][v]);
                }
            }
        }
        let scale = 1.0 / z as f64;
        for row in &mut grad {
            for g in row.iter_mut() {
                *g *= scale;
            }
        }
        Ok(grad)
    }
}

/// Step used for central finite differences.
pub const FINITE_DIFFERENCE_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so that logits whose true
/// gradient is zero are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    /// `max |a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)` over all logits.
    pub max_relative_error: f64,
}

/// Compares the analytic gradient with central finite differences.
pub fn gradient_check(
    policy: &ToyPolicy,
    group: &[ToyTrajectory],
    params: &ObjectiveParams,
) -> Result<GradientReport, ObjectiveError> {
    let analytic = policy.gradient(group, params)?;
    let h = FINITE_DIFFERENCE_STEP;
    let mut numeric = alloc::vec![alloc::vec![0.0; policy.vocab()]; policy.contexts()];
    let mut probe = policy.clone();
    let mut max_rel: f64 = 0.0;
    for c in 0..policy.contexts() {
        for v in 0..policy.vocab() {
            let base = policy.logits[c][v];
            probe.logits[c][v] = base + h;
            let up = probe.objective(group, params)?;
            probe.logits[c][v] = base - h;
            let down = probe.objective(group, params)?;
            probe.logits[c][v] = base;
            let n = (up - down) / (2.0 * h);
            numeric[c][v] = n;
            let a = analytic[c][v];
            let denom = a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR);
            max_rel = max_rel.max((a - n).abs() / denom);
        }
    }
    Ok(GradientReport {
        analytic,
        numeric,
        max_relative_error: max_rel,
    })
}
