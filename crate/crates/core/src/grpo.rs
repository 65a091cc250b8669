//! Clipped group-relative surrogate objective and its exact gradient.
//!
//! For a batch of `B` question groups, each with `G` responses of three
//! tokens:
//!
//! ```text
//! J = 1/B sum_q [ 1/G sum_i 1/3 sum_t min(c A, clip(c, 1-eps, 1+eps) A) - beta KL_q ]
//! c = pi(o_t) / pi_old(o_t)
//! ```
//!
//! Where the clipped branch is the active minimum its gradient is zero;
//! elsewhere `d(c A) = A c grad log pi`.

use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageGroup;
use crate::error::{Result, TtrlError};
use crate::policy::{accumulate_kl_grad, kl_to_reference, Gradient, PolicyParameters, Response, POSITIONS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub inner_epochs: usize,
    pub accumulation_steps: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.0,
            learning_rate: 0.5,
            inner_epochs: 1,
            accumulation_steps: 2,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(TtrlError::invalid("epsilon", format!("{} not in (0, 1)", self.epsilon)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(TtrlError::invalid("beta", format!("{} must be >= 0", self.beta)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TtrlError::invalid(
                "learning_rate",
                format!("{} must be > 0", self.learning_rate),
            ));
        }
        if self.inner_epochs == 0 {
            return Err(TtrlError::invalid("inner_epochs", "must be at least 1"));
        }
        if self.accumulation_steps == 0 {
            return Err(TtrlError::invalid("accumulation_steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Rollouts for one question, all drawn from the same snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub question_id: usize,
    pub responses: Vec<Response>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub objective_value: f64,
    /// Share of tokens whose clipped branch is strictly the minimum.
    pub clipped_fraction: f64,
    pub grad_norm: f64,
    /// Mean exact KL to the reference over the batch's questions.
    pub mean_kl: f64,
}

struct Partial {
    objective: f64,
    clipped: usize,
    tokens: usize,
    kl: f64,
    grad: Gradient,
}

fn group_contribution(
    policy: &PolicyParameters,
    snapshot: &PolicyParameters,
    reference: &PolicyParameters,
    group: &RolloutGroup,
    advantages: &AdvantageGroup,
    config: &GrpoConfig,
) -> Result<Partial> {
    let g = group.responses.len();
    if g == 0 || advantages.values.len() != g {
        return Err(TtrlError::LengthMismatch {
            expected: g,
            actual: advantages.values.len(),
        });
    }
    let mut part = Partial {
        objective: 0.0,
        clipped: 0,
        tokens: 0,
        kl: 0.0,
        grad: Gradient::zeros_like(policy),
    };
    let token_weight = 1.0 / (g * POSITIONS) as f64;
    for (resp, &adv) in group.responses.iter().zip(&advantages.values) {
        if resp.snapshot_id != snapshot.snapshot_id {
            return Err(TtrlError::SnapshotMismatch {
                expected: snapshot.snapshot_id,
                found: resp.snapshot_id,
            });
        }
        if resp.question_id != group.question_id {
            return Err(TtrlError::invalid("groups", "response belongs to a different question"));
        }
        let per_token = policy.token_logprobs_and_logit_grads(resp)?;
        for (pos, (lp, dlogits)) in per_token.iter().enumerate() {
            let ratio = (lp - resp.token_logprobs[pos]).exp();
            let clipped_ratio = ratio.clamp(1.0 - config.epsilon, 1.0 + config.epsilon);
            let unclipped = ratio * adv;
            let clipped = clipped_ratio * adv;
            part.tokens += 1;
            if clipped < unclipped {
                part.objective += token_weight * clipped;
                part.clipped += 1;
            } else {
                part.objective += token_weight * unclipped;
                if adv != 0.0 {
                    policy.scatter_logit_grad(
                        &mut part.grad,
                        resp.question_id,
                        pos,
                        dlogits,
                        token_weight * adv * ratio,
                    );
                }
            }
        }
    }
    if config.beta > 0.0 {
        let kl = kl_to_reference(policy, reference, group.question_id)?;
        part.kl = kl;
        part.objective -= config.beta * kl;
        accumulate_kl_grad(policy, reference, group.question_id, -config.beta, &mut part.grad)?;
    } else {
        part.kl = kl_to_reference(policy, reference, group.question_id)?;
    }
    Ok(part)
}

/// Objective averaged over the batch's groups and its gradient.
pub fn surrogate_and_grad(
    policy: &PolicyParameters,
    snapshot: &PolicyParameters,
    reference: &PolicyParameters,
    groups: &[(RolloutGroup, AdvantageGroup)],
    config: &GrpoConfig,
) -> Result<(SurrogateReport, Gradient)> {
    accumulated_surrogate_and_grad(policy, snapshot, reference, groups, config, 1)
}

/// As [`surrogate_and_grad`], reducing over `micro_batches` consecutive
/// chunks in fixed order. Each chunk's mean is weighted by its share of the
/// batch, so the result equals the full-batch mean.
pub fn accumulated_surrogate_and_grad(
    policy: &PolicyParameters,
    snapshot: &PolicyParameters,
    reference: &PolicyParameters,
    groups: &[(RolloutGroup, AdvantageGroup)],
    config: &GrpoConfig,
    micro_batches: usize,
) -> Result<(SurrogateReport, Gradient)> {
    config.validate()?;
    if groups.is_empty() {
        return Err(TtrlError::invalid("groups", "empty batch"));
    }
    if !policy.same_shape(snapshot) || !policy.same_shape(reference) {
        return Err(TtrlError::ShapeMismatch(
            "policy, snapshot and reference differ in shape".into(),
        ));
    }
    let b = groups.len();
    let chunk = b.div_ceil(micro_batches.max(1));
    let mut grad = Gradient::zeros_like(policy);
    let mut report = SurrogateReport::default();
    let (mut clipped, mut tokens) = (0usize, 0usize);
    for micro in groups.chunks(chunk) {
        let mut micro_grad = Gradient::zeros_like(policy);
        let mut micro_obj = 0.0;
        for (group, adv) in micro {
            let part = group_contribution(policy, snapshot, reference, group, adv, config)?;
            micro_obj += part.objective;
            micro_grad.add_scaled(&part.grad, 1.0);
            clipped += part.clipped;
            tokens += part.tokens;
            report.mean_kl += part.kl / b as f64;
        }
        let m = micro.len() as f64;
        report.objective_value += (micro_obj / m) * (m / b as f64);
        grad.add_scaled(&micro_grad, 1.0 / b as f64);
    }
    report.clipped_fraction = clipped as f64 / tokens as f64;
    report.grad_norm = grad.norm();
    if !report.objective_value.is_finite() {
        return Err(TtrlError::NonFinite("objective"));
    }
    Ok((report, grad))
}
