//! Multiple-attempt rollout sampling.
//!
//! Up to `max_attempts` groups are drawn for a question and the first group
//! whose responses are not all identical is used; if every group is uniform
//! the last one is used.

use rand::Rng;

use crate::error::{Result, TtrlError};
use crate::policy::{PolicyParameters, Response};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOutcome {
    pub chosen_group: Vec<Response>,
    /// 1-based index of the chosen attempt.
    pub attempts_used: usize,
    /// The chosen group is itself uniform.
    pub all_identical: bool,
}

/// Every response has the same token sequence as the first. Compares raw
/// tokens, not parsed answers.
pub fn all_same(group: &[Response]) -> Result<bool> {
    let first = group.first().ok_or_else(|| TtrlError::invalid("group", "empty"))?;
    Ok(group.iter().all(|r| r.tokens == first.tokens))
}

/// Whether every attempt is drawn before selecting (fixed rng consumption)
/// or generation stops at the first non-uniform group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttemptMode {
    #[default]
    Eager,
    Lazy,
}

pub fn sample_group<R: Rng + ?Sized>(
    policy: &PolicyParameters,
    question_id: usize,
    g: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<Response>> {
    (0..g).map(|_| policy.sample(question_id, temperature, rng)).collect()
}

pub fn sample_with_attempts<R: Rng + ?Sized>(
    policy: &PolicyParameters,
    question_id: usize,
    g: usize,
    temperature: f64,
    max_attempts: usize,
    mode: AttemptMode,
    rng: &mut R,
) -> Result<SamplingOutcome> {
    if g == 0 {
        return Err(TtrlError::invalid("g_rollouts", "must be at least 1"));
    }
    if max_attempts == 0 {
        return Err(TtrlError::invalid("mas_attempts", "must be at least 1"));
    }
    let mut chosen: Option<(usize, Vec<Response>)> = None;
    for attempt in 1..=max_attempts {
        if chosen.is_some() && mode == AttemptMode::Lazy {
            break;
        }
        let group = sample_group(policy, question_id, g, temperature, rng)?;
        if chosen.is_none() && (!all_same(&group)? || attempt == max_attempts) {
            chosen = Some((attempt, group));
        }
    }
    let (attempts_used, chosen_group) = chosen.expect("last attempt is always selected");
    let all_identical = all_same(&chosen_group)?;
    Ok(SamplingOutcome {
        chosen_group,
        attempts_used,
        all_identical,
    })
}
