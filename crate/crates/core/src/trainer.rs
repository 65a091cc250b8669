//! The label-free adaptation loop.
//!
//! Stage one votes a pseudo-label for every question; stage two repeatedly
//! samples rollout groups, scores them against the pseudo-labels, weights the
//! group-normalised advantages by label confidence and takes clipped policy
//! gradient steps.
//!
//! Nothing here can see the hidden answers: the loop consumes an
//! [`UnlabeledDataset`], and accuracy diagnostics come in through a
//! [`StepObserver`] that only receives the policy and returns aggregates.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::advantage::{compute_advantages, WeightKind};
use crate::env::{QuestionView, UnlabeledDataset};
use crate::error::{Result, TtrlError};
use crate::grpo::{accumulated_surrogate_and_grad, GrpoConfig, RolloutGroup};
use crate::labeling::{pseudo_label_from_stream, PseudoLabel};
use crate::policy::PolicyParameters;
use crate::reward::score;
use crate::rng::{self, Purpose};
use crate::sampling::{sample_with_attempts, AttemptMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub m_votes: u32,
    pub g_rollouts: usize,
    pub temperature: f64,
    pub steps: usize,
    pub global_batch: usize,
    pub report_step: usize,
    pub weight_kind: WeightKind,
    pub mas_attempts: usize,
    pub attempt_mode: AttemptMode,
    /// Re-vote pseudo-labels with the current policy at each pass over the data.
    pub refresh_labels: bool,
    #[serde(flatten)]
    pub grpo: GrpoConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m_votes: 64,
            g_rollouts: 4,
            temperature: 1.0,
            steps: 500,
            global_batch: 8,
            report_step: 100,
            weight_kind: WeightKind::Exp,
            mas_attempts: 3,
            attempt_mode: AttemptMode::Eager,
            refresh_labels: false,
            grpo: GrpoConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.grpo.validate()?;
        if self.m_votes == 0 {
            return Err(TtrlError::invalid("m_votes", "must be at least 1"));
        }
        if self.g_rollouts < 2 {
            return Err(TtrlError::invalid(
                "g_rollouts",
                "group advantages need at least 2 rollouts",
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(TtrlError::invalid(
                "temperature",
                format!("{} must be > 0", self.temperature),
            ));
        }
        if self.global_batch == 0 {
            return Err(TtrlError::invalid("global_batch", "must be at least 1"));
        }
        if self.report_step > self.steps {
            return Err(TtrlError::invalid(
                "report_step",
                format!("{} exceeds steps = {}", self.report_step, self.steps),
            ));
        }
        if self.mas_attempts == 0 {
            return Err(TtrlError::invalid("mas_attempts", "must be at least 1"));
        }
        Ok(())
    }
}

/// Questions paired with their pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub questions: Vec<QuestionView>,
    pub labels: Vec<PseudoLabel>,
}

impl LabeledDataset {
    pub fn new(data: &UnlabeledDataset, labels: Vec<PseudoLabel>) -> Result<Self> {
        if labels.len() != data.len() {
            return Err(TtrlError::LengthMismatch {
                expected: data.len(),
                actual: labels.len(),
            });
        }
        if let Some((i, _)) = labels.iter().enumerate().find(|(i, l)| l.question_id != *i) {
            return Err(TtrlError::invalid(
                "labels",
                format!("label {i} is for another question"),
            ));
        }
        Ok(Self {
            questions: data.questions.clone(),
            labels,
        })
    }

    /// Question ids with a usable pseudo-label.
    pub fn trainable(&self) -> Vec<usize> {
        self.labels
            .iter()
            .filter(|l| !l.is_skipped())
            .map(|l| l.question_id)
            .collect()
    }

    pub fn skipped_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_skipped()).count()
    }
}

fn vote_all(
    policy: &PolicyParameters,
    data: &[QuestionView],
    config: &TrainConfig,
    round: u64,
) -> Result<Vec<PseudoLabel>> {
    data.iter()
        .map(|q| {
            let mut rng = rng::stream(config.seed, Purpose::Votes, round, q.id as u64);
            pseudo_label_from_stream(policy, q.id, config.m_votes, config.temperature, &mut rng)
        })
        .collect()
}

/// Votes a pseudo-label for every question. Fails if no question produced a
/// parseable vote.
pub fn run_pseudo_label_phase(
    policy: &PolicyParameters,
    data: &UnlabeledDataset,
    config: &TrainConfig,
) -> Result<LabeledDataset> {
    if data.is_empty() {
        return Err(TtrlError::invalid("dataset", "empty"));
    }
    if policy.num_questions() != data.len() {
        return Err(TtrlError::ShapeMismatch(format!(
            "policy covers {} questions, dataset has {}",
            policy.num_questions(),
            data.len()
        )));
    }
    config.validate()?;
    let labeled = LabeledDataset::new(data, vote_all(policy, &data.questions, config, 0)?)?;
    if labeled.trainable().is_empty() {
        return Err(TtrlError::AllSkipped);
    }
    Ok(labeled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    /// Oracle-only diagnostic: greedy accuracy after this step's update.
    pub eval_accuracy: Option<f64>,
    /// Oracle-only diagnostic: accuracy of the pseudo-labels in use.
    pub pseudo_label_accuracy: Option<f64>,
    pub mean_confidence: f64,
    pub collapse_count: usize,
    /// `attempts_histogram[i]` counts groups chosen at attempt `i + 1`.
    pub attempts_histogram: Vec<usize>,
    pub objective_value: f64,
    pub clipped_fraction: f64,
    pub grad_norm: f64,
    pub mean_kl: f64,
}

/// Hooks into the adaptation loop. Implementations may hold evaluation data;
/// the loop only ever sees the aggregates they return.
pub trait StepObserver {
    /// Accuracy of `policy`, if an evaluator is attached.
    fn eval_accuracy(&mut self, _policy: &PolicyParameters) -> Result<Option<f64>> {
        Ok(None)
    }

    /// Accuracy of the pseudo-labels currently in use, if an evaluator is attached.
    fn label_accuracy(&mut self, _labels: &[PseudoLabel]) -> Result<Option<f64>> {
        Ok(None)
    }

    /// Called after every completed step with the updated policy.
    fn on_step(&mut self, _record: &MetricsRecord, _policy: &PolicyParameters) -> Result<()> {
        Ok(())
    }

    /// Called with the last good policy before an aborting error is returned.
    fn on_abort(&mut self, _last_good: &PolicyParameters, _step: usize) {}
}

/// Observer that records nothing.
pub struct NoObserver;

impl StepObserver for NoObserver {}

/// Where step `s` draws its questions: a seeded shuffle of the trainable ids
/// per pass, cycled.
pub fn batch_for_step(trainable: &[usize], step: usize, batch: usize, seed: u64) -> Vec<usize> {
    let n = trainable.len();
    let mut out = Vec::with_capacity(batch);
    let mut cached_epoch = usize::MAX;
    let mut order = Vec::new();
    for slot in step * batch..(step + 1) * batch {
        let epoch = slot / n;
        if epoch != cached_epoch {
            order = trainable.to_vec();
            order.shuffle(&mut rng::stream(seed, Purpose::Shuffle, epoch as u64, 0));
            cached_epoch = epoch;
        }
        out.push(order[slot % n]);
    }
    out
}

/// Starting state for [`run_adaptation`].
#[derive(Debug, Clone)]
pub struct AdaptationState {
    pub policy: PolicyParameters,
    /// Frozen pre-adaptation policy for the KL term.
    pub reference: PolicyParameters,
    pub labeled: LabeledDataset,
    /// Number of steps already completed.
    pub start_step: usize,
}

impl AdaptationState {
    pub fn new(policy: PolicyParameters, labeled: LabeledDataset) -> Self {
        Self {
            reference: policy.clone(),
            policy,
            labeled,
            start_step: 0,
        }
    }
}

/// Runs steps `start_step..config.steps`, returning the final policy and one
/// record per executed step.
pub fn run_adaptation(
    state: AdaptationState,
    config: &TrainConfig,
    observer: &mut dyn StepObserver,
) -> Result<(PolicyParameters, Vec<MetricsRecord>)> {
    config.validate()?;
    let AdaptationState {
        mut policy,
        reference,
        mut labeled,
        start_step,
    } = state;
    if policy.num_questions() != labeled.questions.len() || !policy.same_shape(&reference) {
        return Err(TtrlError::ShapeMismatch(
            "policy does not match the labeled dataset".into(),
        ));
    }
    let mut trainable = labeled.trainable();
    if trainable.is_empty() {
        return Err(TtrlError::AllSkipped);
    }
    let passes = |step: usize, n: usize| step * config.global_batch / n;
    if config.refresh_labels && start_step > 0 {
        labeled.labels = vote_all(
            &policy,
            &labeled.questions,
            config,
            passes(start_step, trainable.len()) as u64,
        )?;
        trainable = labeled.trainable();
    }
    let mut label_accuracy = observer.label_accuracy(&labeled.labels)?;
    let mut records = Vec::with_capacity(config.steps.saturating_sub(start_step));

    for step in start_step..config.steps {
        if config.refresh_labels && step > start_step {
            let (prev, now) = (passes(step - 1, trainable.len()), passes(step, trainable.len()));
            if now != prev {
                labeled.labels = vote_all(&policy, &labeled.questions, config, now as u64)?;
                trainable = labeled.trainable();
                if trainable.is_empty() {
                    observer.on_abort(&policy, step);
                    return Err(TtrlError::AllSkipped);
                }
                label_accuracy = observer.label_accuracy(&labeled.labels)?;
            }
        }
        let batch = batch_for_step(&trainable, step, config.global_batch, config.seed);
        let snapshot = policy.clone();
        let mut groups = Vec::with_capacity(batch.len());
        let mut attempts_histogram = vec![0usize; config.mas_attempts.max(3)];
        let mut collapse_count = 0;
        let mut confidence_sum = 0.0;
        for (slot, &q) in batch.iter().enumerate() {
            let label = &labeled.labels[q];
            let mut rng = rng::stream(config.seed, Purpose::Rollouts, step as u64, slot as u64);
            let outcome = sample_with_attempts(
                &snapshot,
                q,
                config.g_rollouts,
                config.temperature,
                config.mas_attempts,
                config.attempt_mode,
                &mut rng,
            )?;
            let rewards: Vec<f64> = outcome.chosen_group.iter().map(|r| score(r, label).r_total).collect();
            let adv = compute_advantages(&rewards, label.confidence, config.weight_kind)?;
            attempts_histogram[outcome.attempts_used - 1] += 1;
            collapse_count += adv.collapse_flag as usize;
            confidence_sum += label.confidence;
            groups.push((
                RolloutGroup {
                    question_id: q,
                    responses: outcome.chosen_group,
                },
                adv,
            ));
        }

        let mut report = Default::default();
        for _ in 0..config.grpo.inner_epochs {
            let result = accumulated_surrogate_and_grad(
                &policy,
                &snapshot,
                &reference,
                &groups,
                &config.grpo,
                config.grpo.accumulation_steps,
            )
            .and_then(|(rep, grad)| Ok((rep, policy.apply_update(&grad, config.grpo.learning_rate)?)));
            match result {
                Ok((rep, next)) => {
                    report = rep;
                    policy = next;
                }
                Err(e) => {
                    observer.on_abort(&snapshot, step);
                    return Err(e);
                }
            }
        }

        let record = MetricsRecord {
            step: step + 1,
            eval_accuracy: observer.eval_accuracy(&policy)?,
            pseudo_label_accuracy: label_accuracy,
            mean_confidence: confidence_sum / batch.len() as f64,
            collapse_count,
            attempts_histogram,
            objective_value: report.objective_value,
            clipped_fraction: report.clipped_fraction,
            grad_norm: report.grad_norm,
            mean_kl: report.mean_kl,
        };
        observer.on_step(&record, &policy)?;
        records.push(record);
    }
    Ok((policy, records))
}
