//! The per-item sampling loops: plain self-consistency, early-stopping
//! self-consistency, the entropy-threshold baseline, and the exact cost
//! oracle for the early-stopping process.
//!
//! Within one item, windows are strictly sequential (the stopping rule is
//! inherently sequential). Across items the engine is reentrant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::TaskKind;
use crate::generate::{Generator, GeneratorError, GeneratorRequest, Message, SamplerParams};
use crate::voting::{is_unanimous, tally, vote, AnswerKey, Sample, TokenUsage, Window};

/// Whole-window retry cap for generator failures: partial windows are
/// discarded and retried whole, never voted on partially (D8).
const WINDOW_RETRIES: u32 = 2;

/// One item's identity and prompt, as the engine sees it.
#[derive(Debug, Clone)]
pub struct ItemContext {
    pub item_id: String,
    pub prompt: Vec<Message>,
    pub kind: TaskKind,
}

impl ItemContext {
    pub fn new(item_id: impl Into<String>, prompt: Vec<Message>, kind: TaskKind) -> Self {
        Self { item_id: item_id.into(), prompt, kind }
    }
}

/// Early-stopping configuration: window size w, sampling budget L, and the
/// first window's size w0 (defaults to w; the control scheme probes with a
/// fixed w0 and may then run with a different w).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscConfig {
    pub window_size: u32,
    pub max_samples: u32,
    pub first_window_size: u32,
    pub sampler: SamplerParams,
}

impl EscConfig {
    pub fn new(window_size: u32, max_samples: u32, sampler: SamplerParams) -> Self {
        Self { window_size, max_samples, first_window_size: window_size, sampler }
    }

    pub fn with_first_window(mut self, first_window_size: u32) -> Self {
        self.first_window_size = first_window_size;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.window_size == 0 || self.first_window_size == 0 || self.max_samples == 0 {
            return Err(EngineError::Config(
                "window sizes and the sampling budget must be positive".into(),
            ));
        }
        if self.window_size > self.max_samples {
            return Err(EngineError::Config(format!(
                "window size {} exceeds the sampling budget {}",
                self.window_size, self.max_samples
            )));
        }
        if self.first_window_size > self.max_samples {
            return Err(EngineError::Config(format!(
                "first window size {} exceeds the sampling budget {}",
                self.first_window_size, self.max_samples
            )));
        }
        self.sampler.validate()?;
        Ok(())
    }
}

/// Per-item result of one sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct EscOutcome {
    pub vote: AnswerKey,
    pub samples: Vec<Sample>,
    pub samples_used: u32,
    pub windows_used: u32,
    pub stopped_early: bool,
    pub usage_total: TokenUsage,
    /// D5 diagnostic: an early-stopped run whose pooled vote differs from
    /// the unanimous window's answer.
    pub vote_set_divergence: bool,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("generator failure: {0}")]
    Generator(#[from] GeneratorError),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

fn sample_window(
    generator: &dyn Generator,
    item: &ItemContext,
    n: u32,
    window_index: u32,
    params: SamplerParams,
) -> Result<Window, EngineError> {
    let request = GeneratorRequest {
        item_id: item.item_id.clone(),
        prompt: item.prompt.clone(),
        n,
        window_index,
        kind: item.kind,
        params,
    };
    let mut last_err = None;
    for _ in 0..=WINDOW_RETRIES {
        match generator.sample(&request) {
            Ok(samples) if samples.len() == n as usize => return Ok(Window::new(samples)),
            Ok(samples) => {
                last_err = Some(GeneratorError::Protocol(format!(
                    "generator returned {} samples, requested {n}",
                    samples.len()
                )));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(EngineError::Generator(last_err.expect("at least one attempt")))
}

fn assemble(
    item: &ItemContext,
    samples: Vec<Sample>,
    windows_used: u32,
    stop: Option<AnswerKey>,
) -> EscOutcome {
    let answers: Vec<AnswerKey> = samples.iter().map(|s| s.answer.clone()).collect();
    let winner = vote(&tally(&answers).expect("runs draw at least one sample"));
    let mut usage_total = TokenUsage::default();
    for s in &samples {
        usage_total.add(s.usage);
    }
    let stopped_early = stop.is_some();
    let vote_set_divergence = match &stop {
        Some(unanimous) => *unanimous != winner,
        None => false,
    };
    if vote_set_divergence {
        log::warn!(
            "vote-set divergence on item {}: pooled vote {} != unanimous window answer {}",
            item.item_id,
            winner,
            stop.as_ref().expect("divergence implies a stop")
        );
    }
    EscOutcome {
        vote: winner,
        samples_used: samples.len() as u32,
        windows_used,
        stopped_early,
        usage_total,
        vote_set_divergence,
        samples,
    }
}

/// Draws one first window of `first_window_size` samples (window index 0),
/// exactly as `run_esc` would — the probe step of the control scheme, whose
/// windows can then be passed back in as `past_window`.
pub fn draw_first_window(
    generator: &dyn Generator,
    item: &ItemContext,
    first_window_size: u32,
    params: SamplerParams,
) -> Result<Window, EngineError> {
    if first_window_size == 0 {
        return Err(EngineError::Config("the first window size must be positive".into()));
    }
    params.validate()?;
    sample_window(generator, item, first_window_size, 0, params)
}

/// Plain self-consistency: draw exactly `max_samples` in one logical request
/// and take the majority vote.
pub fn run_sc(
    generator: &dyn Generator,
    item: &ItemContext,
    max_samples: u32,
    params: SamplerParams,
) -> Result<EscOutcome, EngineError> {
    if max_samples == 0 {
        return Err(EngineError::Config("the sampling budget must be positive".into()));
    }
    params.validate()?;
    let window = sample_window(generator, item, max_samples, 0, params)?;
    Ok(assemble(item, window.into_samples(), 1, None))
}

/// The sequence of window sizes for one run: the first window, then full
/// windows of `w`, then the budget remainder (which is drawn and checked for
/// unanimity but cannot stop anything early, the budget being spent).
fn window_plan(config: &EscConfig) -> (u32, u32, u32) {
    let after_first = config.max_samples - config.first_window_size;
    (config.first_window_size, after_first / config.window_size, after_first % config.window_size)
}

/// Early-stopping self-consistency: draw windows sequentially and stop as
/// soon as one full window is unanimous; the vote is over all drawn samples.
///
/// `past_window` reuses an already-drawn first window (of size
/// `first_window_size`); subsequent stream derivation continues from window
/// index 1 either way, so reused and fresh runs line up.
pub fn run_esc(
    generator: &dyn Generator,
    item: &ItemContext,
    config: &EscConfig,
    past_window: Option<Window>,
) -> Result<EscOutcome, EngineError> {
    config.validate()?;
    if let Some(past) = &past_window {
        if past.len() != config.first_window_size as usize {
            return Err(EngineError::Config(format!(
                "past window has {} samples, expected the first window size {}",
                past.len(),
                config.first_window_size
            )));
        }
    }

    let (first_size, full_windows, remainder) = window_plan(config);
    let mut samples: Vec<Sample> = Vec::with_capacity(config.max_samples as usize);
    let mut windows_used = 0u32;
    let mut stop: Option<AnswerKey> = None;

    for index in 0..=full_windows {
        let window = match (index, &past_window) {
            (0, Some(past)) => past.clone(),
            (0, None) => sample_window(generator, item, first_size, 0, config.sampler)?,
            _ => sample_window(generator, item, config.window_size, index, config.sampler)?,
        };
        windows_used += 1;
        let unanimous = is_unanimous(&window);
        let answer = window.samples()[0].answer.clone();
        samples.extend(window.into_samples());
        if unanimous {
            stop = Some(answer);
            break;
        }
    }

    if stop.is_none() && remainder > 0 {
        let window = sample_window(generator, item, remainder, full_windows + 1, config.sampler)?;
        windows_used += 1;
        // Checked per D6, but the budget is exhausted: nothing early happened.
        let _ = is_unanimous(&window);
        samples.extend(window.into_samples());
    }

    Ok(assemble(item, samples, windows_used, stop))
}

/// Entropy-threshold baseline: draw one sample at a time (one request each,
/// so prompts are charged per sample) and stop once the normalized entropy
/// of all answers so far drops to `theta` or below. Normalization is by
/// ln(distinct answers), taken as 0 when only one distinct answer was seen.
pub fn run_entropy_threshold(
    generator: &dyn Generator,
    item: &ItemContext,
    max_samples: u32,
    theta: f64,
    params: SamplerParams,
) -> Result<EscOutcome, EngineError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(EngineError::Config(format!("theta must be in [0, 1], got {theta}")));
    }
    if max_samples < 2 {
        return Err(EngineError::Config("the entropy baseline needs a budget of at least 2".into()));
    }
    params.validate()?;

    let mut samples: Vec<Sample> = Vec::with_capacity(max_samples as usize);
    let mut answers: Vec<AnswerKey> = Vec::with_capacity(max_samples as usize);
    let mut stopped = false;
    for index in 0..max_samples {
        let window = sample_window(generator, item, 1, index, params)?;
        let sample = window.into_samples().pop().expect("window of one");
        answers.push(sample.answer.clone());
        samples.push(sample);
        if index >= 1 {
            let dist = tally(&answers).expect("non-empty");
            let normalized = if dist.distinct() <= 1 {
                0.0
            } else {
                dist.entropy() / (dist.distinct() as f64).ln()
            };
            if normalized <= theta {
                stopped = true;
                break;
            }
        }
    }

    let winner = vote(&tally(&answers).expect("non-empty"));
    let mut usage_total = TokenUsage::default();
    for s in &samples {
        usage_total.add(s.usage);
    }
    Ok(EscOutcome {
        vote: winner,
        samples_used: samples.len() as u32,
        windows_used: samples.len() as u32,
        stopped_early: stopped,
        usage_total,
        vote_set_divergence: false,
        samples,
    })
}

/// Exact expected sample count of the early-stopping process when every
/// window has size `w` and answers are i.i.d. from `probs`:
/// Σ_{j=0}^{m−1} q(1−q)^j (j+1) w + (1−q)^m L with q = Σ_i p_i^w, m = ⌊L/w⌋.
///
/// Serves as the closed-form oracle the Monte Carlo suite checks the engine
/// against.
pub fn exact_expected_cost(probs: &[f64], w: u32, l: u32) -> Result<f64, EngineError> {
    if probs.is_empty() || probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(EngineError::InvalidDistribution(
            "probabilities must lie in [0, 1]".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(EngineError::InvalidDistribution(format!(
            "probabilities sum to {sum}, expected 1"
        )));
    }
    if w == 0 || w > l {
        return Err(EngineError::Config(format!("need 1 <= w <= L, got w={w}, L={l}")));
    }
    let q: f64 = probs.iter().map(|&p| p.powi(w as i32)).sum();
    let m = l / w;
    let mut expected = 0.0;
    let mut continue_prob = 1.0; // (1-q)^j
    for j in 0..m {
        expected += q * continue_prob * ((j + 1) * w) as f64;
        continue_prob *= 1.0 - q;
    }
    expected += continue_prob * l as f64;
    Ok(expected)
}

/// Runs ESC and SC on one shared sample stream: the full windowed stream is
/// drawn once, ESC consumes the prefix up to its stopping point, and SC
/// votes over all `max_samples` (so ESC's samples are a prefix of SC's).
/// The ESC leg is field-for-field identical to what `run_esc` would return
/// on the same seed and configuration.
pub fn paired_esc_sc(
    generator: &dyn Generator,
    item: &ItemContext,
    config: &EscConfig,
    past_window: Option<Window>,
) -> Result<(EscOutcome, EscOutcome), EngineError> {
    config.validate()?;
    if let Some(past) = &past_window {
        if past.len() != config.first_window_size as usize {
            return Err(EngineError::Config(format!(
                "past window has {} samples, expected the first window size {}",
                past.len(),
                config.first_window_size
            )));
        }
    }

    let (first_size, full_windows, remainder) = window_plan(config);
    let mut windows: Vec<Window> = Vec::with_capacity(full_windows as usize + 2);
    for index in 0..=full_windows {
        let window = match (index, &past_window) {
            (0, Some(past)) => past.clone(),
            (0, None) => sample_window(generator, item, first_size, 0, config.sampler)?,
            _ => sample_window(generator, item, config.window_size, index, config.sampler)?,
        };
        windows.push(window);
    }
    if remainder > 0 {
        windows.push(sample_window(generator, item, remainder, full_windows + 1, config.sampler)?);
    }

    // ESC replay over the pre-drawn windows, mirroring run_esc's scan.
    let mut esc_samples: Vec<Sample> = Vec::new();
    let mut windows_used = 0u32;
    let mut stop: Option<AnswerKey> = None;
    for (index, window) in windows.iter().enumerate() {
        let full = index <= full_windows as usize;
        windows_used += 1;
        esc_samples.extend(window.samples().iter().cloned());
        if full && is_unanimous(window) {
            stop = Some(window.samples()[0].answer.clone());
            break;
        }
    }
    let esc = assemble(item, esc_samples, windows_used, stop);

    let all_samples: Vec<Sample> =
        windows.iter().flat_map(|w| w.samples().iter().cloned()).collect();
    let sc_windows = windows.len() as u32;
    let sc = assemble(item, all_samples, sc_windows, None);
    Ok((esc, sc))
}
