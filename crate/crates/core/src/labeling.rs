//! Majority-vote pseudo-labels and their agreement confidence.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{read_jsonl, write_jsonl, Answer};
use crate::error::{Result, TtrlError};
use crate::policy::PolicyParameters;
use crate::reward::parse_answer;
use crate::rng::{self, Purpose};

/// Vote counts per option plus the unparseable count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteHistogram {
    pub counts: Vec<u32>,
    pub unparseable: u32,
}

impl VoteHistogram {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![0; k],
            unparseable: 0,
        }
    }

    pub fn from_votes(k: usize, votes: &[Answer]) -> Self {
        let mut h = Self::new(k);
        votes.iter().for_each(|v| h.record(*v));
        h
    }

    pub fn record(&mut self, vote: Answer) {
        match vote {
            Answer::Label(j) => self.counts[j] += 1,
            Answer::Unparseable => self.unparseable += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum::<u32>() + self.unparseable
    }

    pub fn count(&self, answer: Answer) -> u32 {
        match answer {
            Answer::Label(j) => self.counts.get(j).copied().unwrap_or(0),
            Answer::Unparseable => self.unparseable,
        }
    }

    /// Most-voted label, lowest index on ties. Unparseable only when no vote parsed.
    pub fn mode(&self) -> Answer {
        let mut best: Option<usize> = None;
        for (j, c) in self.counts.iter().enumerate() {
            if *c > 0 && best.is_none_or(|b| *c > self.counts[b]) {
                best = Some(j);
            }
        }
        best.map_or(Answer::Unparseable, Answer::Label)
    }
}

/// Fraction of the votes that agree with `answer`.
pub fn confidence(histogram: &VoteHistogram, answer: Answer) -> Result<f64> {
    let m = histogram.total();
    if m == 0 {
        return Err(TtrlError::invalid("histogram", "no votes"));
    }
    if let Answer::Label(j) = answer {
        if j >= histogram.counts.len() {
            return Err(TtrlError::invalid("answer", format!("label {j} outside histogram")));
        }
    }
    Ok(histogram.count(answer) as f64 / m as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub question_id: usize,
    pub answer: Answer,
    pub confidence: f64,
    pub histogram: VoteHistogram,
    pub m: u32,
}

impl PseudoLabel {
    pub fn from_histogram(question_id: usize, histogram: VoteHistogram) -> Result<Self> {
        let answer = histogram.mode();
        let confidence = confidence(&histogram, answer)?;
        Ok(Self {
            question_id,
            answer,
            confidence,
            m: histogram.total(),
            histogram,
        })
    }

    /// True when every vote was unparseable; such questions are not trained on.
    pub fn is_skipped(&self) -> bool {
        self.answer == Answer::Unparseable
    }
}

/// Draws `m` responses from the question's own vote stream and takes the mode.
pub fn generate_pseudo_label(
    policy: &PolicyParameters,
    question_id: usize,
    m: u32,
    temperature: f64,
    seed: u64,
) -> Result<PseudoLabel> {
    let mut rng = rng::stream(seed, Purpose::Votes, 0, question_id as u64);
    pseudo_label_from_stream(policy, question_id, m, temperature, &mut rng)
}

pub fn pseudo_label_from_stream<R: Rng + ?Sized>(
    policy: &PolicyParameters,
    question_id: usize,
    m: u32,
    temperature: f64,
    rng: &mut R,
) -> Result<PseudoLabel> {
    if m == 0 {
        return Err(TtrlError::invalid("m_votes", "must be at least 1"));
    }
    let mut hist = VoteHistogram::new(policy.k());
    for _ in 0..m {
        hist.record(parse_answer(&policy.sample(question_id, temperature, rng)?).answer);
    }
    PseudoLabel::from_histogram(question_id, hist)
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    question_id: usize,
    answer: String,
    confidence: f64,
    histogram: VoteHistogram,
}

pub fn save_labels(path: &Path, labels: &[PseudoLabel]) -> Result<()> {
    write_jsonl(
        path,
        labels.iter().map(|l| CacheRecord {
            question_id: l.question_id,
            answer: l.answer.to_text(),
            confidence: l.confidence,
            histogram: l.histogram.clone(),
        }),
    )
}

/// Loads a label cache, re-deriving answer and confidence from the histogram
/// and rejecting records that disagree with it.
pub fn load_labels(path: &Path) -> Result<Vec<PseudoLabel>> {
    let records: Vec<CacheRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .map(|r| {
            let label = PseudoLabel::from_histogram(r.question_id, r.histogram)?;
            let stored = Answer::from_text(&r.answer)
                .ok_or_else(|| TtrlError::parse(path, format!("bad answer `{}`", r.answer)))?;
            if stored != label.answer || r.confidence != label.confidence {
                return Err(TtrlError::parse(
                    path,
                    format!(
                        "question {}: cached answer/confidence disagree with histogram",
                        r.question_id
                    ),
                ));
            }
            Ok(label)
        })
        .collect()
}
