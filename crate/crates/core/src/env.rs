//! Synthetic multiple-choice environment.
//!
//! A [`Dataset`] owns the hidden answer of each question. Everything that
//! adapts the policy works on an [`UnlabeledDataset`], a projection that has
//! no truth field at all; the only ways back to the truth are
//! [`eval_accuracy`] and the aggregate-only [`Oracle`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtrlError};
use crate::rng::{self, Purpose};

pub const MAX_OPTIONS: usize = 26;

/// Label text for option `index` ("A", "B", ...).
pub fn label_name(index: usize) -> String {
    assert!(index < MAX_OPTIONS, "label index {index} out of range");
    char::from(b'A' + index as u8).to_string()
}

pub fn label_index(name: &str) -> Option<usize> {
    let b = name.as_bytes();
    (b.len() == 1 && b[0].is_ascii_uppercase()).then(|| (b[0] - b'A') as usize)
}

/// A parsed answer: an option index or the unparseable sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Answer {
    Label(usize),
    Unparseable,
}

impl Answer {
    pub fn label(self) -> Option<usize> {
        match self {
            Answer::Label(i) => Some(i),
            Answer::Unparseable => None,
        }
    }

    pub fn to_text(self) -> String {
        match self {
            Answer::Label(i) => label_name(i),
            Answer::Unparseable => UNPARSEABLE.to_string(),
        }
    }

    pub fn from_text(s: &str) -> Option<Self> {
        if s == UNPARSEABLE {
            Some(Answer::Unparseable)
        } else {
            label_index(s).map(Answer::Label)
        }
    }
}

pub const UNPARSEABLE: &str = "unparseable";

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionInstance {
    pub id: usize,
    pub option_labels: Vec<String>,
    latent_truth: usize,
    pub signal_strength: f64,
}

impl QuestionInstance {
    pub fn new(id: usize, k: usize, latent_truth: usize, signal_strength: f64) -> Result<Self> {
        check_k(k)?;
        if latent_truth >= k {
            return Err(TtrlError::invalid("truth", format!("{latent_truth} not in [0, {k})")));
        }
        if !(signal_strength >= 0.0 && signal_strength.is_finite()) {
            return Err(TtrlError::invalid(
                "signal",
                format!("{signal_strength} must be finite and >= 0"),
            ));
        }
        Ok(Self {
            id,
            option_labels: (0..k).map(label_name).collect(),
            latent_truth,
            signal_strength,
        })
    }

    pub fn k(&self) -> usize {
        self.option_labels.len()
    }

    /// Evaluation-only access to the hidden answer.
    pub fn latent_truth(&self) -> usize {
        self.latent_truth
    }

    pub fn view(&self) -> QuestionView {
        QuestionView {
            id: self.id,
            option_labels: self.option_labels.clone(),
        }
    }
}

/// What the adaptation path may see of a question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: usize,
    #[serde(rename = "options")]
    pub option_labels: Vec<String>,
}

impl QuestionView {
    pub fn k(&self) -> usize {
        self.option_labels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub questions: Vec<QuestionInstance>,
    pub seed: u64,
}

/// Truth-stripped dataset consumed by the label-free training path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlabeledDataset {
    pub questions: Vec<QuestionView>,
}

impl UnlabeledDataset {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Reads a dataset file, discarding the `truth` and `signal` columns.
    pub fn load(path: &Path) -> Result<Self> {
        let questions: Vec<QuestionView> = read_jsonl(path)?;
        check_ids(questions.iter().map(|q| q.id), path)?;
        for q in &questions {
            check_k(q.k())?;
        }
        Ok(Self { questions })
    }
}

/// Generation parameters. `signal_spread` in [0, 1] spreads per-question
/// signal uniformly over `signal * [1 - spread, 1 + spread]`; 0 gives every
/// question exactly `signal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub n: usize,
    pub k: usize,
    pub signal: f64,
    #[serde(default)]
    pub signal_spread: f64,
    pub seed: u64,
}

impl GenParams {
    pub fn new(n: usize, k: usize, signal: f64, seed: u64) -> Self {
        Self {
            n,
            k,
            signal,
            signal_spread: 0.0,
            seed,
        }
    }

    pub fn with_spread(mut self, spread: f64) -> Self {
        self.signal_spread = spread;
        self
    }
}

fn check_k(k: usize) -> Result<()> {
    if !(2..=MAX_OPTIONS).contains(&k) {
        return Err(TtrlError::invalid(
            "k",
            format!("{k} options; need 2 <= k <= {MAX_OPTIONS}"),
        ));
    }
    Ok(())
}

fn check_ids(ids: impl Iterator<Item = usize>, path: &Path) -> Result<()> {
    for (expected, id) in ids.enumerate() {
        if id != expected {
            return Err(TtrlError::parse(
                path,
                format!("ids must be contiguous from 0; line {} has id {id}", expected + 1),
            ));
        }
    }
    Ok(())
}

pub fn generate_dataset(params: &GenParams) -> Result<Dataset> {
    let GenParams {
        n,
        k,
        signal,
        signal_spread,
        seed,
    } = *params;
    if n == 0 {
        return Err(TtrlError::invalid("n", "must be at least 1"));
    }
    check_k(k)?;
    if !(signal >= 0.0 && signal.is_finite()) {
        return Err(TtrlError::invalid(
            "signal",
            format!("{signal} must be finite and >= 0"),
        ));
    }
    if !(0.0..=1.0).contains(&signal_spread) {
        return Err(TtrlError::invalid(
            "signal_spread",
            format!("{signal_spread} not in [0, 1]"),
        ));
    }
    let mut rng = rng::stream(seed, Purpose::Dataset, 0, 0);
    let mut questions = Vec::with_capacity(n);
    for id in 0..n {
        let truth = rng.gen_range(0..k);
        let u: f64 = rng.gen();
        let s = signal * (1.0 + signal_spread * (2.0 * u - 1.0));
        questions.push(QuestionInstance::new(id, k, truth, s.max(0.0))?);
    }
    Ok(Dataset { questions, seed })
}

/// Fraction of answers equal to the hidden option; unparseable is wrong.
pub fn eval_accuracy(dataset: &Dataset, answers: &[Answer]) -> Result<f64> {
    if answers.len() != dataset.questions.len() {
        return Err(TtrlError::LengthMismatch {
            expected: dataset.questions.len(),
            actual: answers.len(),
        });
    }
    let correct = dataset
        .questions
        .iter()
        .zip(answers)
        .filter(|(q, a)| **a == Answer::Label(q.latent_truth))
        .count();
    Ok(correct as f64 / answers.len() as f64)
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: usize,
    options: Vec<String>,
    truth: usize,
    signal: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            questions: self.questions.iter().map(QuestionInstance::view).collect(),
        }
    }

    pub fn oracle(&self) -> Oracle {
        Oracle {
            truths: self.questions.iter().map(|q| q.latent_truth).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let records = self.questions.iter().map(|q| Record {
            id: q.id,
            options: q.option_labels.clone(),
            truth: q.latent_truth,
            signal: q.signal_strength,
        });
        write_jsonl(path, records)
    }

    /// Loads a dataset file including its hidden answers. The seed is not
    /// stored in the file and is reported as 0.
    pub fn load(path: &Path) -> Result<Self> {
        let records: Vec<Record> = read_jsonl(path)?;
        check_ids(records.iter().map(|r| r.id), path)?;
        let mut questions = Vec::with_capacity(records.len());
        for r in records {
            let mut q = QuestionInstance::new(r.id, r.options.len(), r.truth, r.signal)?;
            if r.options.iter().enumerate().any(|(i, l)| *l != label_name(i)) {
                return Err(TtrlError::parse(
                    path,
                    format!("question {}: options must be A, B, ... in order", r.id),
                ));
            }
            q.option_labels = r.options;
            questions.push(q);
        }
        Ok(Self { questions, seed: 0 })
    }
}

/// Aggregate-only access to the hidden answers, for diagnostics. It never
/// hands out per-question truth.
#[derive(Debug, Clone)]
pub struct Oracle {
    truths: Vec<usize>,
}

impl Oracle {
    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    pub fn accuracy(&self, answers: &[Answer]) -> Result<f64> {
        Ok(self.correctness(answers)?.iter().filter(|c| **c).count() as f64 / answers.len().max(1) as f64)
    }

    /// Per-question correctness of `answers`; used by the calibration analysis.
    pub fn correctness(&self, answers: &[Answer]) -> Result<Vec<bool>> {
        if answers.len() != self.truths.len() {
            return Err(TtrlError::LengthMismatch {
                expected: self.truths.len(),
                actual: answers.len(),
            });
        }
        Ok(self
            .truths
            .iter()
            .zip(answers)
            .map(|(t, a)| *a == Answer::Label(*t))
            .collect())
    }
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| TtrlError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TtrlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TtrlError::parse(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| TtrlError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| TtrlError::parse(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| TtrlError::io(path, e))?;
    }
    w.flush().map_err(|e| TtrlError::io(path, e))
}
