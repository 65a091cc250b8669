//! Evaluation against the hidden answers. Oracle-only: nothing in this
//! module feeds back into the policy.

use serde::{Deserialize, Serialize};

use crate::env::{Answer, Dataset, Oracle};
use crate::error::Result;
use crate::labeling::PseudoLabel;
use crate::policy::PolicyParameters;
use crate::reward::parse_tokens;
use crate::trainer::{run_pseudo_label_phase, MetricsRecord, StepObserver, TrainConfig};

/// Parsed greedy answer for every question.
pub fn greedy_answers(policy: &PolicyParameters) -> Result<Vec<Answer>> {
    (0..policy.num_questions())
        .map(|q| Ok(parse_tokens(&policy.greedy(q)?).answer))
        .collect()
}

pub fn greedy_accuracy(policy: &PolicyParameters, oracle: &Oracle) -> Result<f64> {
    oracle.accuracy(&greedy_answers(policy)?)
}

pub fn label_answers(labels: &[PseudoLabel]) -> Vec<Answer> {
    labels.iter().map(|l| l.answer).collect()
}

/// `(confidence, correct)` for every non-skipped pseudo-label.
pub fn calibration_pairs(labels: &[PseudoLabel], oracle: &Oracle) -> Result<Vec<(f64, bool)>> {
    let correct = oracle.correctness(&label_answers(labels))?;
    Ok(labels
        .iter()
        .zip(correct)
        .filter(|(l, _)| !l.is_skipped())
        .map(|(l, ok)| (l.confidence, ok))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Direct inference: one greedy answer per question.
    pub di: f64,
    /// Direct inference with majority voting over `m_votes` samples.
    pub dimv: f64,
}

pub fn run_baselines(policy: &PolicyParameters, dataset: &Dataset, config: &TrainConfig) -> Result<Baselines> {
    let oracle = dataset.oracle();
    let labeled = run_pseudo_label_phase(policy, &dataset.unlabeled(), config)?;
    Ok(Baselines {
        di: greedy_accuracy(policy, &oracle)?,
        dimv: oracle.accuracy(&label_answers(&labeled.labels))?,
    })
}

/// Step observer that reports greedy accuracy and pseudo-label accuracy.
pub struct OracleObserver<'a, F = fn(&MetricsRecord, &PolicyParameters) -> Result<()>> {
    oracle: &'a Oracle,
    on_step: Option<F>,
}

impl<'a> OracleObserver<'a> {
    pub fn new(oracle: &'a Oracle) -> Self {
        Self { oracle, on_step: None }
    }
}

impl<'a, F> OracleObserver<'a, F>
where
    F: FnMut(&MetricsRecord, &PolicyParameters) -> Result<()>,
{
    pub fn with_callback(oracle: &'a Oracle, on_step: F) -> Self {
        Self {
            oracle,
            on_step: Some(on_step),
        }
    }
}

impl<F> StepObserver for OracleObserver<'_, F>
where
    F: FnMut(&MetricsRecord, &PolicyParameters) -> Result<()>,
{
    fn eval_accuracy(&mut self, policy: &PolicyParameters) -> Result<Option<f64>> {
        greedy_accuracy(policy, self.oracle).map(Some)
    }

    fn label_accuracy(&mut self, labels: &[PseudoLabel]) -> Result<Option<f64>> {
        self.oracle.accuracy(&label_answers(labels)).map(Some)
    }

    fn on_step(&mut self, record: &MetricsRecord, policy: &PolicyParameters) -> Result<()> {
        match self.on_step.as_mut() {
            Some(f) => f(record, policy),
            None => Ok(()),
        }
    }
}
