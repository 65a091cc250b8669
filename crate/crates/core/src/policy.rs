//! Position-conditioned categorical policy over three-token responses.
//!
//! A response is `[format, answer, close]`. Positions 0 and 2 are a softmax
//! over `format_logits[pos]`, shared across questions. Position 1 is a softmax
//! over `format_logits[1]` with the question's `option_logits` added on the
//! label slice, so the answer choice is per-question while the tendency to
//! emit a non-label token there is shared.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::env::{Dataset, MAX_OPTIONS};
use crate::error::{Result, TtrlError};
use crate::rng::{self, Purpose};
use rand_distr::StandardNormal;

pub const POSITIONS: usize = 3;
/// Finite stand-in for a masked logit; its softmax weight underflows to 0.
pub const MASKED_LOGIT: f64 = -1.0e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u8);

impl TokenId {
    pub const OPEN: TokenId = TokenId(0);
    pub const CLOSE: TokenId = TokenId(1);
    pub const NOISE: TokenId = TokenId(2);
    const SPECIAL: usize = 3;

    pub fn label(index: usize) -> TokenId {
        TokenId((Self::SPECIAL + index) as u8)
    }

    /// Option index if this is a label token.
    pub fn as_label(self) -> Option<usize> {
        (self.0 as usize).checked_sub(Self::SPECIAL)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// `[OPEN, CLOSE, NOISE, A, B, ...]` truncated to `k` labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    k: usize,
}

impl Vocabulary {
    pub fn new(k: usize) -> Result<Self> {
        if !(2..=MAX_OPTIONS).contains(&k) {
            return Err(TtrlError::invalid("k", format!("{k} not in [2, {MAX_OPTIONS}]")));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn size(&self) -> usize {
        TokenId::SPECIAL + self.k
    }

    pub fn contains(&self, t: TokenId) -> bool {
        t.index() < self.size()
    }

    pub fn name(&self, t: TokenId) -> String {
        match t {
            TokenId::OPEN => "<open>".into(),
            TokenId::CLOSE => "<close>".into(),
            TokenId::NOISE => "<noise>".into(),
            other => crate::env::label_name(other.as_label().expect("label token")),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        (0..self.size()).map(|i| self.name(TokenId(i as u8))).collect()
    }

    pub fn parse(&self, name: &str) -> Option<TokenId> {
        (0..self.size())
            .map(|i| TokenId(i as u8))
            .find(|t| self.name(*t) == name)
    }
}

/// Logit tables for the policy. Cloning yields an immutable snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    vocab: Vocabulary,
    num_questions: usize,
    /// Row-major `[POSITIONS, vocab]`.
    pub format_logits: Vec<f64>,
    /// Row-major `[num_questions, k]`.
    pub option_logits: Vec<f64>,
    pub snapshot_id: u64,
}

/// Gradient with the same layout as [`PolicyParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub format: Vec<f64>,
    pub option: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(p: &PolicyParameters) -> Self {
        Self {
            format: vec![0.0; p.format_logits.len()],
            option: vec![0.0; p.option_logits.len()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.format.iter().chain(&self.option)
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.format.iter_mut().zip(&other.format) {
            *a += scale * b;
        }
        for (a, b) in self.option.iter_mut().zip(&other.option) {
            *a += scale * b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|g| *g == 0.0)
    }
}

/// A sampled three-token response with its log-probabilities under the
/// generating snapshot at the sampling temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub question_id: usize,
    pub tokens: [TokenId; POSITIONS],
    pub token_logprobs: [f64; POSITIONS],
    pub snapshot_id: u64,
    pub temperature: f64,
}

impl Response {
    /// A response with no generation record, for parsing and scoring tests.
    pub fn from_tokens(question_id: usize, tokens: [TokenId; POSITIONS]) -> Self {
        Self {
            question_id,
            tokens,
            token_logprobs: [0.0; POSITIONS],
            snapshot_id: 0,
            temperature: 1.0,
        }
    }
}

/// Construction knobs for the initial policy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitParams {
    /// Added to OPEN at position 0 and CLOSE at position 2.
    pub format_bias: f64,
    /// Logit of the non-label tokens at position 1. [`MASKED_LOGIT`] keeps the
    /// answer position on the label set.
    pub answer_noise: f64,
    /// Standard deviation of seeded Gaussian noise added to every option logit.
    pub logit_noise: f64,
    /// Seed for `logit_noise`.
    pub seed: u64,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            format_bias: 3.0,
            answer_noise: MASKED_LOGIT,
            logit_noise: 0.0,
            seed: 0,
        }
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(TtrlError::invalid("temperature", format!("{temperature} must be > 0")));
    }
    Ok(())
}

/// Builds the pre-adaptation policy: format biases on the delimiters, each
/// question's signal on its hidden option, plus optional option-logit noise
/// drawn from the question's stream of `init.seed`.
pub fn init_policy(dataset: &Dataset, init: &InitParams) -> Result<PolicyParameters> {
    let first = dataset
        .questions
        .first()
        .ok_or_else(|| TtrlError::invalid("dataset", "empty"))?;
    if !(init.format_bias >= 0.0 && init.format_bias.is_finite()) {
        return Err(TtrlError::invalid(
            "format_bias",
            format!("{} must be finite and >= 0", init.format_bias),
        ));
    }
    if !init.answer_noise.is_finite() {
        return Err(TtrlError::NonFinite("answer_noise"));
    }
    if !(init.logit_noise >= 0.0 && init.logit_noise.is_finite()) {
        return Err(TtrlError::invalid(
            "logit_noise",
            format!("{} must be finite and >= 0", init.logit_noise),
        ));
    }
    let k = first.k();
    if dataset.questions.iter().any(|q| q.k() != k) {
        return Err(TtrlError::ShapeMismatch(
            "all questions must share one option count".into(),
        ));
    }
    let mut policy = PolicyParameters::zeros(k, dataset.len())?;
    let v = policy.vocab.size();
    policy.format_logits[TokenId::OPEN.index()] = init.format_bias;
    policy.format_logits[2 * v + TokenId::CLOSE.index()] = init.format_bias;
    for t in [TokenId::OPEN, TokenId::CLOSE, TokenId::NOISE] {
        policy.format_logits[v + t.index()] = init.answer_noise;
    }
    for q in &dataset.questions {
        let row = &mut policy.option_logits[q.id * k..(q.id + 1) * k];
        if init.logit_noise > 0.0 {
            let mut rng = rng::stream(init.seed, Purpose::Init, 0, q.id as u64);
            for x in row.iter_mut() {
                *x = init.logit_noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        row[q.latent_truth()] += q.signal_strength;
    }
    Ok(policy)
}

impl PolicyParameters {
    pub fn zeros(k: usize, num_questions: usize) -> Result<Self> {
        let vocab = Vocabulary::new(k)?;
        Ok(Self {
            vocab,
            num_questions,
            format_logits: vec![0.0; POSITIONS * vocab.size()],
            option_logits: vec![0.0; num_questions * k],
            snapshot_id: 0,
        })
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn k(&self) -> usize {
        self.vocab.k
    }

    pub fn num_questions(&self) -> usize {
        self.num_questions
    }

    pub fn same_shape(&self, other: &PolicyParameters) -> bool {
        self.vocab == other.vocab && self.num_questions == other.num_questions
    }

    pub fn is_finite(&self) -> bool {
        self.format_logits
            .iter()
            .chain(&self.option_logits)
            .all(|x| x.is_finite())
    }

    fn check_question(&self, question_id: usize) -> Result<()> {
        if question_id >= self.num_questions {
            return Err(TtrlError::UnknownQuestion(question_id));
        }
        Ok(())
    }

    /// Untempered logits over the vocabulary at `pos`.
    pub fn position_logits(&self, question_id: usize, pos: usize) -> Vec<f64> {
        let v = self.vocab.size();
        let mut z = self.format_logits[pos * v..(pos + 1) * v].to_vec();
        if pos == 1 {
            let k = self.k();
            let row = &self.option_logits[question_id * k..(question_id + 1) * k];
            for (j, o) in row.iter().enumerate() {
                z[TokenId::label(j).index()] += o;
            }
        }
        z
    }

    fn tempered_logits(&self, question_id: usize, pos: usize, temperature: f64) -> Vec<f64> {
        let mut z = self.position_logits(question_id, pos);
        if temperature != 1.0 {
            z.iter_mut().for_each(|x| *x /= temperature);
        }
        z
    }

    /// Probabilities over the vocabulary at `pos` under `temperature`.
    pub fn distribution(&self, question_id: usize, pos: usize, temperature: f64) -> Result<Vec<f64>> {
        self.check_question(question_id)?;
        check_temperature(temperature)?;
        Ok(softmax(&self.tempered_logits(question_id, pos, temperature)))
    }

    /// Draws a response position by position from the tempered softmax.
    pub fn sample<R: Rng + ?Sized>(&self, question_id: usize, temperature: f64, rng: &mut R) -> Result<Response> {
        self.check_question(question_id)?;
        check_temperature(temperature)?;
        let mut tokens = [TokenId::OPEN; POSITIONS];
        let mut token_logprobs = [0.0; POSITIONS];
        for pos in 0..POSITIONS {
            let logp = log_softmax(&self.tempered_logits(question_id, pos, temperature));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, lp) in logp.iter().enumerate() {
                let p = lp.exp();
                if p == 0.0 {
                    continue;
                }
                acc += p;
                chosen = Some(i);
                if u < acc {
                    break;
                }
            }
            let i = chosen.expect("distribution has positive mass");
            tokens[pos] = TokenId(i as u8);
            token_logprobs[pos] = logp[i];
        }
        Ok(Response {
            question_id,
            tokens,
            token_logprobs,
            snapshot_id: self.snapshot_id,
            temperature,
        })
    }

    /// The temperature-to-zero response: argmax per position, lowest index on ties.
    pub fn greedy(&self, question_id: usize) -> Result<[TokenId; POSITIONS]> {
        self.check_question(question_id)?;
        let mut tokens = [TokenId::OPEN; POSITIONS];
        for (pos, t) in tokens.iter_mut().enumerate() {
            *t = TokenId(argmax(&self.position_logits(question_id, pos)) as u8);
        }
        Ok(tokens)
    }

    fn check_response(&self, response: &Response) -> Result<()> {
        self.check_question(response.question_id)?;
        check_temperature(response.temperature)?;
        if let Some(t) = response.tokens.iter().find(|t| !self.vocab.contains(**t)) {
            return Err(TtrlError::invalid(
                "response",
                format!("token {} outside vocabulary", t.0),
            ));
        }
        Ok(())
    }

    /// Current log-probability of each token of `response` together with the
    /// gradient of that log-probability with respect to the position logits:
    /// `(onehot - softmax) / temperature`.
    pub fn token_logprobs_and_logit_grads(&self, response: &Response) -> Result<[(f64, Vec<f64>); POSITIONS]> {
        self.check_response(response)?;
        let t = response.temperature;
        Ok(std::array::from_fn(|pos| {
            let logp = log_softmax(&self.tempered_logits(response.question_id, pos, t));
            let tok = response.tokens[pos].index();
            let grad = logp
                .iter()
                .enumerate()
                .map(|(i, lp)| ((i == tok) as u8 as f64 - lp.exp()) / t)
                .collect();
            (logp[tok], grad)
        }))
    }

    /// Accumulates `scale * dlogits` (a gradient over the position-`pos`
    /// logits of `question_id`) into `grad`.
    pub fn scatter_logit_grad(&self, grad: &mut Gradient, question_id: usize, pos: usize, dlogits: &[f64], scale: f64) {
        let v = self.vocab.size();
        for (g, d) in grad.format[pos * v..(pos + 1) * v].iter_mut().zip(dlogits) {
            *g += scale * d;
        }
        if pos == 1 {
            let k = self.k();
            for j in 0..k {
                grad.option[question_id * k + j] += scale * dlogits[TokenId::label(j).index()];
            }
        }
    }

    /// Total current log-probability of `response` and its gradient.
    pub fn logprob_and_grad(&self, response: &Response) -> Result<(f64, Gradient)> {
        let per_token = self.token_logprobs_and_logit_grads(response)?;
        let mut grad = Gradient::zeros_like(self);
        let mut total = 0.0;
        for (pos, (lp, g)) in per_token.iter().enumerate() {
            total += lp;
            self.scatter_logit_grad(&mut grad, response.question_id, pos, g, 1.0);
        }
        Ok((total, grad))
    }

    /// Ascent step `theta + lr * grad`; the result gets the next snapshot id.
    pub fn apply_update(&self, grad: &Gradient, learning_rate: f64) -> Result<PolicyParameters> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(TtrlError::invalid(
                "learning_rate",
                format!("{learning_rate} must be > 0"),
            ));
        }
        if grad.format.len() != self.format_logits.len() || grad.option.len() != self.option_logits.len() {
            return Err(TtrlError::ShapeMismatch("gradient does not match policy tables".into()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TtrlError::NonFinite("gradient"));
        }
        let mut next = self.clone();
        for (p, g) in next.format_logits.iter_mut().zip(&grad.format) {
            *p += learning_rate * g;
        }
        for (p, g) in next.option_logits.iter_mut().zip(&grad.option) {
            *p += learning_rate * g;
        }
        next.snapshot_id = self.snapshot_id + 1;
        Ok(next)
    }
}

fn categorical_kl(logits_p: &[f64], logits_r: &[f64]) -> f64 {
    let lp = log_softmax(logits_p);
    let lr = log_softmax(logits_r);
    lp.iter()
        .zip(&lr)
        .map(|(a, b)| {
            let p = a.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (a - b)
            }
        })
        .sum::<f64>()
        .max(0.0)
}

fn check_kl_shapes(policy: &PolicyParameters, reference: &PolicyParameters, question_id: usize) -> Result<()> {
    if !policy.same_shape(reference) {
        return Err(TtrlError::ShapeMismatch(
            "policy and reference differ in vocabulary or question set".into(),
        ));
    }
    policy.check_question(question_id)
}

/// Exact `KL(policy || reference)` for one question, summed over positions.
pub fn kl_to_reference(policy: &PolicyParameters, reference: &PolicyParameters, question_id: usize) -> Result<f64> {
    check_kl_shapes(policy, reference, question_id)?;
    Ok((0..POSITIONS)
        .map(|pos| {
            categorical_kl(
                &policy.position_logits(question_id, pos),
                &reference.position_logits(question_id, pos),
            )
        })
        .sum())
}

/// Adds `scale * d KL(policy || reference) / d theta` for one question into `grad`.
/// Per position, `dKL/dz_i = p_i (log p_i - log r_i - KL)`.
pub fn accumulate_kl_grad(
    policy: &PolicyParameters,
    reference: &PolicyParameters,
    question_id: usize,
    scale: f64,
    grad: &mut Gradient,
) -> Result<()> {
    check_kl_shapes(policy, reference, question_id)?;
    for pos in 0..POSITIONS {
        let lp = log_softmax(&policy.position_logits(question_id, pos));
        let lr = log_softmax(&reference.position_logits(question_id, pos));
        let terms: Vec<f64> = lp
            .iter()
            .zip(&lr)
            .map(|(a, b)| {
                let p = a.exp();
                if p == 0.0 {
                    0.0
                } else {
                    a - b
                }
            })
            .collect();
        let kl: f64 = lp.iter().zip(&terms).map(|(a, d)| a.exp() * d).sum();
        let dz: Vec<f64> = lp.iter().zip(&terms).map(|(a, d)| a.exp() * (d - kl)).collect();
        policy.scatter_logit_grad(grad, question_id, pos, &dz, scale);
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &str = "ttrl-policy v1";

impl PolicyParameters {
    /// Text dump with a header; floats use the shortest exact representation
    /// so a load reproduces every bit.
    pub fn to_checkpoint_string(&self) -> String {
        let v = self.vocab.size();
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(s, "snapshot_id {}", self.snapshot_id).unwrap();
        writeln!(s, "vocab {}", self.vocab.tokens().join(" ")).unwrap();
        writeln!(s, "format_logits {POSITIONS} {v}").unwrap();
        for row in self.format_logits.chunks(v) {
            s.push_str(&join_floats(row));
            s.push('\n');
        }
        writeln!(s, "option_logits {} {}", self.num_questions, self.k()).unwrap();
        for row in self.option_logits.chunks(self.k()) {
            s.push_str(&join_floats(row));
            s.push('\n');
        }
        s
    }

    pub fn from_checkpoint_str(text: &str, origin: &Path) -> Result<Self> {
        let err = |m: String| TtrlError::parse(origin, m);
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| err(format!("truncated before {what}")));
        if next("magic")? != CHECKPOINT_MAGIC {
            return Err(err("not a policy checkpoint".into()));
        }
        let snapshot_id = header(next("snapshot_id")?, "snapshot_id", origin)?
            .first()
            .ok_or_else(|| err("missing snapshot id".into()))?
            .parse::<u64>()
            .map_err(|e| err(format!("snapshot_id: {e}")))?;
        let vocab_line = header(next("vocab")?, "vocab", origin)?;
        let k = vocab_line
            .len()
            .checked_sub(TokenId::SPECIAL)
            .ok_or_else(|| err("vocabulary too short".into()))?;
        let mut policy = PolicyParameters::zeros(k, 0)?;
        if policy.vocab.tokens() != vocab_line {
            return Err(err(format!("unexpected vocabulary {vocab_line:?}")));
        }
        let dims = parse_dims(header(next("format_logits")?, "format_logits", origin)?, origin)?;
        if dims != (POSITIONS, policy.vocab.size()) {
            return Err(err(format!("format_logits shape {dims:?}")));
        }
        let mut format = Vec::new();
        for _ in 0..POSITIONS {
            format.extend(parse_floats(next("format row")?, dims.1, origin)?);
        }
        let (nq, kk) = parse_dims(header(next("option_logits")?, "option_logits", origin)?, origin)?;
        if kk != k {
            return Err(err(format!(
                "option_logits has {kk} columns, vocabulary has {k} labels"
            )));
        }
        let mut option = Vec::with_capacity(nq * k);
        for _ in 0..nq {
            option.extend(parse_floats(next("option row")?, k, origin)?);
        }
        policy.num_questions = nq;
        policy.format_logits = format;
        policy.option_logits = option;
        policy.snapshot_id = snapshot_id;
        if !policy.is_finite() {
            return Err(TtrlError::NonFinite("checkpoint"));
        }
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string()).map_err(|e| TtrlError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TtrlError::io(path, e))?;
        Self::from_checkpoint_str(&text, path)
    }
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn header(line: &str, key: &str, origin: &Path) -> Result<Vec<String>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(TtrlError::parse(
            origin,
            format!("expected `{key}` header, found `{line}`"),
        ));
    }
    Ok(parts.map(str::to_string).collect())
}

fn parse_dims(parts: Vec<String>, origin: &Path) -> Result<(usize, usize)> {
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(TtrlError::parse(origin, format!("bad dimensions {parts:?}"))),
        },
        _ => Err(TtrlError::parse(origin, format!("bad dimensions {parts:?}"))),
    }
}

fn parse_floats(line: &str, expected: usize, origin: &Path) -> Result<Vec<f64>> {
    let row: Vec<f64> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| TtrlError::parse(origin, format!("bad float: {e}")))?;
    if row.len() != expected {
        return Err(TtrlError::parse(
            origin,
            format!("row has {} values, expected {expected}", row.len()),
        ));
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_dataset, GenParams};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn dataset(n: usize, k: usize, signal: f64) -> Dataset {
        generate_dataset(&GenParams::new(n, k, signal, 11)).unwrap()
    }

    fn random_policy(k: usize, nq: usize, seed: u64) -> PolicyParameters {
        let mut r = rng::stream(seed, Purpose::Init, 0, 0);
        let mut p = PolicyParameters::zeros(k, nq).unwrap();
        p.format_logits.iter_mut().for_each(|x| *x = r.gen_range(-2.0..2.0));
        p.option_logits.iter_mut().for_each(|x| *x = r.gen_range(-2.0..2.0));
        p
    }

    #[test]
    fn zero_signal_gives_uniform_answers() {
        let p = init_policy(&dataset(5, 4, 0.0), &InitParams::default()).unwrap();
        for q in 0..5 {
            let d = p.distribution(q, 1, 1.0).unwrap();
            for j in 0..4 {
                assert!((d[TokenId::label(j).index()] - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_format_bias_gives_uniform_first_position() {
        let init = InitParams {
            format_bias: 0.0,
            ..InitParams::default()
        };
        let p = init_policy(&dataset(3, 4, 0.5), &init).unwrap();
        let d = p.distribution(0, 0, 1.0).unwrap();
        assert!(d.iter().all(|x| (x - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn true_label_probability_closed_form() {
        let d = dataset(4, 4, 0.5);
        let p = init_policy(&d, &InitParams::default()).unwrap();
        let expected = 0.5f64.exp() / (0.5f64.exp() + 3.0);
        assert!((expected - 0.3547).abs() < 1e-4);
        for q in &d.questions {
            let dist = p.distribution(q.id, 1, 1.0).unwrap();
            assert!((dist[TokenId::label(q.latent_truth()).index()] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn logit_noise_is_seeded() {
        let d = dataset(50, 4, 1.0);
        let noisy = |seed| {
            let init = InitParams {
                logit_noise: 1.0,
                seed,
                ..InitParams::default()
            };
            init_policy(&d, &init).unwrap()
        };
        assert_eq!(noisy(3), noisy(3));
        assert_ne!(noisy(3).option_logits, noisy(4).option_logits);
        let clean = init_policy(&d, &InitParams::default()).unwrap();
        let diffs: Vec<f64> = noisy(3)
            .option_logits
            .iter()
            .zip(&clean.option_logits)
            .map(|(a, b)| a - b)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        // 200 standard normal draws: sd of the mean 0.071, of the variance ~0.1.
        assert!(mean.abs() < 0.3 && (var - 1.0).abs() < 0.4, "{mean} {var}");
    }

    #[test]
    fn init_rejects_bad_inputs() {
        let d = dataset(3, 4, 0.5);
        let neg = InitParams {
            format_bias: -1.0,
            ..InitParams::default()
        };
        assert!(init_policy(&d, &neg).is_err());
        let empty = Dataset {
            questions: vec![],
            seed: 0,
        };
        assert!(init_policy(&empty, &InitParams::default()).is_err());
    }

    #[test]
    fn near_zero_temperature_samples_argmax() {
        let p = random_policy(4, 2, 3);
        let mut r = rng::stream(1, Purpose::Rollouts, 0, 0);
        let greedy = p.greedy(1).unwrap();
        let hits = (0..10_000)
            .filter(|_| p.sample(1, 1e-6, &mut r).unwrap().tokens == greedy)
            .count();
        assert!(hits as f64 / 10_000.0 >= 0.999);
    }

    #[test]
    fn uniform_labels_sample_uniformly() {
        // Binomial sd at n=1e4, p=0.25 is 0.0043; 0.02 is ~4.6 sd.
        let p = init_policy(&dataset(1, 4, 0.0), &InitParams::default()).unwrap();
        let mut r = rng::stream(2, Purpose::Rollouts, 0, 0);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let resp = p.sample(0, 1.0, &mut r).unwrap();
            counts[resp.tokens[1].as_label().unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e4 - 0.25).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn distributions_normalised() {
        let p = random_policy(5, 3, 4);
        for q in 0..3 {
            for pos in 0..POSITIONS {
                for t in [0.3, 1.0, 2.5] {
                    let s: f64 = p.distribution(q, pos, t).unwrap().iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sample_errors() {
        let p = random_policy(3, 2, 1);
        let mut r = rng::stream(0, Purpose::Rollouts, 0, 0);
        assert!(matches!(p.sample(2, 1.0, &mut r), Err(TtrlError::UnknownQuestion(2))));
        assert!(p.sample(0, 0.0, &mut r).is_err());
    }

    #[test]
    fn stored_logprobs_match_current_policy() {
        let p = random_policy(4, 3, 5);
        let mut r = rng::stream(3, Purpose::Rollouts, 0, 0);
        for t in [1.0, 0.7] {
            for _ in 0..50 {
                let resp = p.sample(2, t, &mut r).unwrap();
                let (lp, _) = p.logprob_and_grad(&resp).unwrap();
                assert!((lp - resp.token_logprobs.iter().sum::<f64>()).abs() < 1e-12);
                assert!(resp.token_logprobs.iter().all(|l| l.exp() > 0.0 && l.exp() <= 1.0));
            }
        }
    }

    #[test]
    fn uniform_answer_logprob_is_ln_quarter() {
        let p = init_policy(&dataset(1, 4, 0.0), &InitParams::default()).unwrap();
        let resp = Response::from_tokens(0, [TokenId::OPEN, TokenId::label(2), TokenId::CLOSE]);
        let per = p.token_logprobs_and_logit_grads(&resp).unwrap();
        assert!((per[1].0 - 0.25f64.ln()).abs() < 1e-15);
    }

    fn perturbed(p: &PolicyParameters, idx: usize, h: f64) -> PolicyParameters {
        let mut q = p.clone();
        let nf = q.format_logits.len();
        if idx < nf {
            q.format_logits[idx] += h;
        } else {
            q.option_logits[idx - nf] += h;
        }
        q
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        let h = 1e-5;
        for case in 0..100u64 {
            let p = random_policy(2 + (case as usize % 4), 3, 100 + case);
            let mut r = rng::stream(case, Purpose::Rollouts, 0, 0);
            let t = [1.0, 0.5, 1.7][case as usize % 3];
            let resp = p.sample((case % 3) as usize, t, &mut r).unwrap();
            let (_, g) = p.logprob_and_grad(&resp).unwrap();
            let flat: Vec<f64> = g.iter().copied().collect();
            for (i, gi) in flat.iter().enumerate() {
                let up = perturbed(&p, i, h).logprob_and_grad(&resp).unwrap().0;
                let dn = perturbed(&p, i, -h).logprob_and_grad(&resp).unwrap().0;
                let fd = (up - dn) / (2.0 * h);
                assert!(rel_err(*gi, fd) < 1e-5, "case {case} entry {i}: {gi} vs {fd}");
            }
        }
    }

    #[test]
    fn kl_cases() {
        let p = random_policy(4, 2, 8);
        assert_eq!(kl_to_reference(&p, &p, 1).unwrap(), 0.0);
        // One logit at position 0 moved by delta; independent closed form:
        // KL = sum_i p_i ln(p_i / r_i) with p = softmax(z + delta e_j), r = softmax(z).
        let delta = 0.3;
        let mut q = p.clone();
        q.format_logits[2] += delta;
        let z = p.position_logits(0, 0);
        let zr: f64 = z.iter().map(|x| x.exp()).sum();
        let zp: f64 = z
            .iter()
            .enumerate()
            .map(|(i, x)| (x + if i == 2 { delta } else { 0.0 }).exp())
            .sum();
        let pj = (z[2] + delta).exp() / zp;
        let expected = pj * delta + (zr / zp).ln();
        assert!((kl_to_reference(&q, &p, 0).unwrap() - expected).abs() < 1e-12);
        let other = random_policy(3, 2, 8);
        assert!(kl_to_reference(&p, &other, 0).is_err());
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let h = 1e-5;
        let p = random_policy(3, 2, 21);
        let r = random_policy(3, 2, 22);
        let mut g = Gradient::zeros_like(&p);
        accumulate_kl_grad(&p, &r, 1, 1.0, &mut g).unwrap();
        for (i, gi) in g.iter().copied().collect::<Vec<_>>().iter().enumerate() {
            let fd = (kl_to_reference(&perturbed(&p, i, h), &r, 1).unwrap()
                - kl_to_reference(&perturbed(&p, i, -h), &r, 1).unwrap())
                / (2.0 * h);
            assert!(rel_err(*gi, fd) < 1e-5, "{i}: {gi} vs {fd}");
        }
    }

    #[test]
    fn apply_update_contracts() {
        let p = random_policy(3, 2, 9);
        let zero = Gradient::zeros_like(&p);
        let q = p.apply_update(&zero, 0.1).unwrap();
        assert_eq!(q.format_logits, p.format_logits);
        assert_eq!(q.option_logits, p.option_logits);
        assert_eq!(q.snapshot_id, p.snapshot_id + 1);
        assert!(p.apply_update(&zero, 0.0).is_err());
        let mut bad = zero.clone();
        bad.option[0] = f64::NAN;
        assert!(matches!(p.apply_update(&bad, 0.1), Err(TtrlError::NonFinite(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut p = random_policy(6, 4, 12);
        p.snapshot_id = 42;
        p.option_logits[3] = 1.0 / 3.0;
        p.format_logits[0] = MASKED_LOGIT;
        let text = p.to_checkpoint_string();
        let back = PolicyParameters::from_checkpoint_str(&text, Path::new("mem")).unwrap();
        assert_eq!(back, p);
        assert!(back
            .option_logits
            .iter()
            .zip(&p.option_logits)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(PolicyParameters::from_checkpoint_str("garbage", Path::new("mem")).is_err());
    }

    proptest! {
        #[test]
        fn temperature_is_logit_division(seed in 0u64..1000, t in 0.1f64..4.0) {
            let p = random_policy(4, 1, seed);
            let mut scaled = p.clone();
            scaled.format_logits.iter_mut().for_each(|x| *x /= t);
            scaled.option_logits.iter_mut().for_each(|x| *x /= t);
            for pos in 0..POSITIONS {
                let a = p.distribution(0, pos, t).unwrap();
                let b = scaled.distribution(0, pos, 1.0).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn sampling_reproducible(seed in 0u64..1000) {
            let p = random_policy(3, 2, seed);
            let mut a = rng::stream(seed, Purpose::Rollouts, 0, 1);
            let mut b = rng::stream(seed, Purpose::Rollouts, 0, 1);
            for _ in 0..5 {
                prop_assert_eq!(p.sample(1, 1.0, &mut a).unwrap(), p.sample(1, 1.0, &mut b).unwrap());
            }
        }

        #[test]
        fn kl_non_negative(seed in 0u64..1000) {
            let p = random_policy(3, 1, seed);
            let r = random_policy(3, 1, seed + 7);
            prop_assert!(kl_to_reference(&p, &r, 0).unwrap() >= 0.0);
        }
    }
}
