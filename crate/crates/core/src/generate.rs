//! Sampling interface and the seeded synthetic generator used for
//! verification. All randomness flows through [`derive_stream`], so per-item
//! outcomes are independent of scheduling order.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::extract::{canonicalize, extract_answer, TaskKind};
use crate::voting::{AnswerKey, Sample, TokenUsage};

/// One chat message of a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn new(role: impl Into<String>, content: impl Into<String>) -> Self {
        Self { role: role.into(), content: content.into() }
    }
}

/// Decoding parameters. `seed` drives the synthetic generator; endpoints
/// ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_generation_tokens: u32,
    pub seed: u64,
}

impl SamplerParams {
    /// Defaults per task family: temperature 0.5 for boxed math, 0.7
    /// otherwise; no top-p truncation.
    pub fn for_kind(kind: TaskKind, seed: u64) -> Self {
        let temperature = match kind {
            TaskKind::BoxedMath => 0.5,
            _ => 0.7,
        };
        Self { temperature, top_p: 1.0, max_generation_tokens: 1024, seed }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GeneratorError::Protocol(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GeneratorError::Protocol(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_generation_tokens == 0 {
            return Err(GeneratorError::Protocol("max_generation_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self { temperature: 0.7, top_p: 1.0, max_generation_tokens: 1024, seed: 0 }
    }
}

/// Optional top-p profile matching nucleus-truncated decoding setups.
pub const TOP_P_TRUNCATED: f64 = 0.9;

/// A request for `n` samples of one item. `window_index` keys the random
/// stream derivation; `kind` tells the generator how to extract answers.
#[derive(Debug, Clone)]
pub struct GeneratorRequest {
    pub item_id: String,
    pub prompt: Vec<Message>,
    pub n: u32,
    pub window_index: u32,
    pub kind: TaskKind,
    pub params: SamplerParams,
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("request timed out after {attempts} attempts: {detail}")]
    Timeout { attempts: u32, detail: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("unknown item id: {0}")]
    UnknownItem(String),
}

/// Uniform sampling interface. Implementations must tolerate concurrent
/// calls from many items; one logical request covers a whole window so
/// prompt tokens are charged once per window.
pub trait Generator: Send + Sync {
    fn sample(&self, request: &GeneratorRequest) -> Result<Vec<Sample>, GeneratorError>;
}

/// Derives a reproducible, statistically independent random stream per
/// (seed, item, window, slot), independent of scheduling order.
pub fn derive_stream(seed: u64, item_id: &str, window_index: u32, slot: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"esc.stream.v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((item_id.len() as u64).to_le_bytes());
    hasher.update(item_id.as_bytes());
    hasher.update(window_index.to_le_bytes());
    hasher.update(slot.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Fabricated token counts for offline cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenModel {
    pub mean_prompt_tokens: u64,
    pub mean_completion_tokens: u64,
}

impl Default for TokenModel {
    fn default() -> Self {
        Self { mean_prompt_tokens: 500, mean_completion_tokens: 120 }
    }
}

/// Test double for a model's answer distribution: a categorical over answer
/// keys with a known gold answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticItemSpec {
    pub item_id: String,
    pub answer_distribution: BTreeMap<String, f64>,
    pub gold: String,
    #[serde(default)]
    pub token_model: TokenModel,
}

impl SyntheticItemSpec {
    pub fn new(
        item_id: impl Into<String>,
        answer_distribution: impl IntoIterator<Item = (impl Into<String>, f64)>,
        gold: impl Into<String>,
    ) -> Self {
        Self {
            item_id: item_id.into(),
            answer_distribution: answer_distribution
                .into_iter()
                .map(|(k, p)| (k.into(), p))
                .collect(),
            gold: gold.into(),
            token_model: TokenModel::default(),
        }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let sum: f64 = self.answer_distribution.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GeneratorError::Protocol(format!(
                "answer distribution for {} sums to {sum}, expected 1",
                self.item_id
            )));
        }
        if self.answer_distribution.values().any(|&p| p < 0.0) {
            return Err(GeneratorError::Protocol(format!(
                "answer distribution for {} has a negative probability",
                self.item_id
            )));
        }
        Ok(())
    }
}

/// Seeded synthetic generator: draws answers i.i.d. from each item's
/// categorical distribution. Contention-free under concurrency by stream
/// derivation.
pub struct SyntheticGenerator {
    items: HashMap<String, SyntheticItemSpec>,
}

impl SyntheticGenerator {
    /// Keys and golds are canonicalized as raw strings so the fabricated
    /// sample text round-trips through extraction; colliding keys after
    /// canonicalization are rejected.
    pub fn new(specs: Vec<SyntheticItemSpec>) -> Result<Self, GeneratorError> {
        let mut items = HashMap::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            let mut dist = BTreeMap::new();
            for (key, p) in &spec.answer_distribution {
                let canon = match canonicalize(key, TaskKind::RawString) {
                    AnswerKey::Valid(s) => s,
                    AnswerKey::Invalid => {
                        return Err(GeneratorError::Protocol(format!(
                            "item {}: answer key {key:?} canonicalizes to nothing",
                            spec.item_id
                        )))
                    }
                };
                if dist.insert(canon.clone(), *p).is_some() {
                    return Err(GeneratorError::Protocol(format!(
                        "item {}: answer keys collide after canonicalization: {canon:?}",
                        spec.item_id
                    )));
                }
            }
            let gold = match canonicalize(&spec.gold, TaskKind::RawString) {
                AnswerKey::Valid(s) => s,
                AnswerKey::Invalid => {
                    return Err(GeneratorError::Protocol(format!(
                        "item {}: gold answer canonicalizes to nothing",
                        spec.item_id
                    )))
                }
            };
            let canonical = SyntheticItemSpec {
                item_id: spec.item_id.clone(),
                answer_distribution: dist,
                gold,
                token_model: spec.token_model,
            };
            if items.insert(spec.item_id.clone(), canonical).is_some() {
                return Err(GeneratorError::Protocol(format!(
                    "duplicate synthetic item id {}",
                    spec.item_id
                )));
            }
        }
        Ok(Self { items })
    }

    pub fn spec(&self, item_id: &str) -> Option<&SyntheticItemSpec> {
        self.items.get(item_id)
    }

    fn draw(spec: &SyntheticItemSpec, u: f64) -> &str {
        let mut acc = 0.0;
        let mut last = "";
        for (key, &p) in &spec.answer_distribution {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = key;
            if u < acc {
                return key;
            }
        }
        // u landed in residual rounding mass; charge it to the final key.
        last
    }
}

impl Generator for SyntheticGenerator {
    fn sample(&self, request: &GeneratorRequest) -> Result<Vec<Sample>, GeneratorError> {
        request.params.validate()?;
        let spec = self
            .items
            .get(&request.item_id)
            .ok_or_else(|| GeneratorError::UnknownItem(request.item_id.clone()))?;
        let mut samples = Vec::with_capacity(request.n as usize);
        for slot in 0..request.n {
            let mut rng =
                derive_stream(request.params.seed, &request.item_id, request.window_index, slot);
            let raw = Self::draw(spec, rng.gen::<f64>()).to_string();
            let answer = extract_answer(&raw, request.kind);
            let usage = TokenUsage::new(
                if slot == 0 { spec.token_model.mean_prompt_tokens } else { 0 },
                spec.token_model.mean_completion_tokens,
            );
            samples.push(Sample::new(raw, answer, usage));
        }
        Ok(samples)
    }
}

/// One step of a scripted generation sequence.
#[derive(Debug, Clone)]
pub enum ScriptStep {
    Text(String),
    Fail,
}

impl From<&str> for ScriptStep {
    fn from(s: &str) -> Self {
        ScriptStep::Text(s.to_string())
    }
}

/// Replays a predefined per-item sequence of raw generations; `Fail` steps
/// surface as protocol errors so retry paths can be exercised.
pub struct ScriptedGenerator {
    scripts: Mutex<HashMap<String, VecDeque<ScriptStep>>>,
}

impl ScriptedGenerator {
    pub fn new(scripts: impl IntoIterator<Item = (String, Vec<ScriptStep>)>) -> Self {
        Self {
            scripts: Mutex::new(
                scripts.into_iter().map(|(id, steps)| (id, steps.into_iter().collect())).collect(),
            ),
        }
    }

    pub fn single(item_id: &str, steps: impl IntoIterator<Item = impl Into<ScriptStep>>) -> Self {
        Self::new([(item_id.to_string(), steps.into_iter().map(Into::into).collect())])
    }
}

impl Generator for ScriptedGenerator {
    fn sample(&self, request: &GeneratorRequest) -> Result<Vec<Sample>, GeneratorError> {
        let mut scripts = self.scripts.lock().expect("script lock");
        let script = scripts
            .get_mut(&request.item_id)
            .ok_or_else(|| GeneratorError::UnknownItem(request.item_id.clone()))?;
        let mut samples = Vec::with_capacity(request.n as usize);
        for _ in 0..request.n {
            match script.pop_front() {
                Some(ScriptStep::Text(raw)) => {
                    let answer = extract_answer(&raw, request.kind);
                    samples.push(Sample::new(raw, answer, TokenUsage::default()));
                }
                Some(ScriptStep::Fail) => {
                    return Err(GeneratorError::Protocol("scripted failure".into()))
                }
                None => {
                    return Err(GeneratorError::Protocol(format!(
                        "script exhausted for item {}",
                        request.item_id
                    )))
                }
            }
        }
        Ok(samples)
    }
}
