//! Answer representation, tallying, voting, and window diagnostics.
//!
//! Everything here is immutable after construction and safe to share across
//! worker threads; the operations are pure functions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A canonicalized final answer — the unit of voting.
///
/// `Valid` holds canonical text (canonicalization is idempotent, equality is
/// exact text equality). `Invalid` is the reserved marker for extraction
/// failures: it participates in tallies, never wins a tie against a valid
/// key, and a window containing it is never unanimous.
///
/// The derived `Ord` is the voting tie-break order: valid keys first
/// (lexicographically by canonical text), then `Invalid`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnswerKey {
    Valid(String),
    Invalid,
}

impl AnswerKey {
    pub fn valid(text: impl Into<String>) -> Self {
        let text = text.into();
        debug_assert!(!text.is_empty(), "valid answer keys are non-empty");
        AnswerKey::Valid(text)
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self, AnswerKey::Invalid)
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AnswerKey::Valid(s) => Some(s),
            AnswerKey::Invalid => None,
        }
    }
}

impl fmt::Display for AnswerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerKey::Valid(s) => f.write_str(s),
            AnswerKey::Invalid => f.write_str("<INVALID>"),
        }
    }
}

// Persisted as the canonical text, with `null` for extraction failures.
impl Serialize for AnswerKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            AnswerKey::Valid(s) => serializer.serialize_some(s),
            AnswerKey::Invalid => serializer.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for AnswerKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let opt = Option::<String>::deserialize(deserializer)?;
        Ok(match opt {
            Some(s) => AnswerKey::Valid(s),
            None => AnswerKey::Invalid,
        })
    }
}

/// Token counts for one sample or one aggregated run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self { prompt_tokens, completion_tokens }
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

/// One generation: raw text preserved byte-exact, the extracted answer (or
/// the `Invalid` marker), and token usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub raw_text: String,
    pub answer: AnswerKey,
    pub usage: TokenUsage,
}

impl Sample {
    pub fn new(raw_text: impl Into<String>, answer: AnswerKey, usage: TokenUsage) -> Self {
        Self { raw_text: raw_text.into(), answer, usage }
    }
}

/// An ordered block of samples; the engine constructs these at the configured
/// window size (the final window of a run may be budget-truncated, per its
/// producer).
#[derive(Debug, Clone)]
pub struct Window {
    samples: Vec<Sample>,
}

impl Window {
    pub fn new(samples: Vec<Sample>) -> Self {
        assert!(!samples.is_empty(), "windows are non-empty");
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn answers(&self) -> impl Iterator<Item = &AnswerKey> {
        self.samples.iter().map(|s| &s.answer)
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot tally an empty answer list")]
pub struct EmptyTally;

/// Empirical frequency map over answer keys. Counts are exact integers so
/// oracle comparisons stay exact (D4); `total` is always the sum of counts
/// and every stored count is positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerDistribution {
    counts: BTreeMap<AnswerKey, u64>,
    total: u64,
}

impl AnswerDistribution {
    pub fn counts(&self) -> &BTreeMap<AnswerKey, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, key: &AnswerKey) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn frequency(&self, key: &AnswerKey) -> f64 {
        self.count(key) as f64 / self.total as f64
    }

    /// Iterates `(key, frequency)` in tie-break order (valid keys
    /// lexicographically, then `Invalid`).
    pub fn frequencies(&self) -> impl Iterator<Item = (&AnswerKey, f64)> {
        let total = self.total as f64;
        self.counts.iter().map(move |(k, &c)| (k, c as f64 / total))
    }

    pub fn is_one_hot(&self) -> bool {
        self.counts.len() == 1
    }

    /// Shannon entropy of the empirical frequencies, in nats.
    pub fn entropy(&self) -> f64 {
        let total = self.total as f64;
        -self
            .counts
            .values()
            .map(|&c| {
                let f = c as f64 / total;
                f * f.ln()
            })
            .sum::<f64>()
    }
}

/// Counts a list of answers into an `AnswerDistribution`.
pub fn tally(answers: &[AnswerKey]) -> Result<AnswerDistribution, EmptyTally> {
    if answers.is_empty() {
        return Err(EmptyTally);
    }
    let mut counts: BTreeMap<AnswerKey, u64> = BTreeMap::new();
    for a in answers {
        *counts.entry(a.clone()).or_insert(0) += 1;
    }
    Ok(AnswerDistribution { counts, total: answers.len() as u64 })
}

/// Majority vote: an answer with maximal count. Ties break to the smallest
/// key in tie-break order (lexicographic canonical text; `Invalid` loses any
/// tie, D1/D3).
pub fn vote(dist: &AnswerDistribution) -> AnswerKey {
    // BTreeMap iterates in tie-break order, so the first strict maximum wins.
    let mut best: Option<(&AnswerKey, u64)> = None;
    for (key, &count) in dist.counts() {
        match best {
            Some((_, c)) if count <= c => {}
            _ => best = Some((key, count)),
        }
    }
    best.expect("distributions are non-empty").0.clone()
}

/// True iff every extracted answer in the window is the same valid key.
/// A window containing any extraction failure is never unanimous (D3).
pub fn is_unanimous(window: &Window) -> bool {
    let mut answers = window.answers();
    let first = answers.next().expect("windows are non-empty");
    if first.is_invalid() {
        return false;
    }
    answers.all(|a| a == first)
}

/// Shannon entropy (nats) of the window's empirical answer frequencies;
/// zero iff one distinct key.
pub fn window_entropy(window: &Window) -> f64 {
    let answers: Vec<AnswerKey> = window.answers().cloned().collect();
    tally(&answers).expect("windows are non-empty").entropy()
}
