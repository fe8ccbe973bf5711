//! The control scheme: from one observed window per item, predict expected
//! sampling cost and a vote-inconsistency bound for candidate (w, L)
//! settings, and pick the cheapest plan meeting a budget/performance target.
//!
//! Pure computation throughout; reentrant under arbitrary concurrency.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::voting::{tally, vote, AnswerDistribution, AnswerKey, Window};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid control input: {0}")]
    Config(String),
    #[error("no grid candidate meets the budget/performance request")]
    NoFeasiblePlan { table: Vec<ControlPrediction> },
}

/// Per-item first-window distributions, all built from the same number of
/// samples `w0`.
#[derive(Debug, Clone)]
pub struct FirstWindowSet {
    distributions: Vec<AnswerDistribution>,
    first_window_size: u32,
}

impl FirstWindowSet {
    pub fn new(
        distributions: Vec<AnswerDistribution>,
        first_window_size: u32,
    ) -> Result<Self, ControlError> {
        if distributions.is_empty() {
            return Err(ControlError::Config("first-window set is empty".into()));
        }
        if first_window_size == 0 {
            return Err(ControlError::Config("first window size must be positive".into()));
        }
        for (i, d) in distributions.iter().enumerate() {
            if d.total() != first_window_size as u64 {
                return Err(ControlError::Config(format!(
                    "distribution {i} holds {} samples, expected w0 = {first_window_size}",
                    d.total()
                )));
            }
        }
        Ok(Self { distributions, first_window_size })
    }

    pub fn from_windows(windows: &[Window]) -> Result<Self, ControlError> {
        if windows.is_empty() {
            return Err(ControlError::Config("first-window set is empty".into()));
        }
        let w0 = windows[0].len() as u32;
        Self::new(windows.iter().map(empirical_distribution).collect(), w0)
    }

    pub fn first_window_size(&self) -> u32 {
        self.first_window_size
    }

    pub fn distributions(&self) -> &[AnswerDistribution] {
        &self.distributions
    }

    pub fn len(&self) -> usize {
        self.distributions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The empirical frequency map P̂ over a window's answers.
pub fn empirical_distribution(window: &Window) -> AnswerDistribution {
    let answers: Vec<AnswerKey> = window.answers().cloned().collect();
    tally(&answers).expect("windows are non-empty")
}

/// Probability that a size-`w` window of i.i.d. draws from P̂ is unanimous:
/// Σ_i P̂(i)^w.
pub fn stop_probability(dist: &AnswerDistribution, w: u32) -> f64 {
    dist.frequencies().map(|(_, f)| f.powi(w as i32)).sum()
}

/// One-sided upper-tail probability of the standard normal.
pub fn normal_upper_tail(z: f64) -> f64 {
    if z == f64::INFINITY {
        return 0.0;
    }
    if z == f64::NEG_INFINITY {
        return 1.0;
    }
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Bound on the vote being inconsistent with argmax P̂ when an early stop
/// happens: the summed tails of the one-proportion z-test for every
/// non-argmax answer filling a window of `w`. Zero-mass answers contribute
/// nothing (their z is infinite).
pub fn inconsistency_with_stop(dist: &AnswerDistribution, w: u32) -> f64 {
    let argmax = vote(dist);
    let w = w as f64;
    dist.frequencies()
        .filter(|(key, f)| **key != argmax && *f > 0.0)
        .map(|(_, f)| normal_upper_tail((w - w * f) / (w * f * (1.0 - f)).sqrt()))
        .sum()
}

/// Bound on the vote being inconsistent with argmax P̂ when no early stop
/// happens and all `l` samples are voted: a non-argmax answer must reach at
/// least l/2 votes.
pub fn inconsistency_without_stop(dist: &AnswerDistribution, l: u32) -> f64 {
    let argmax = vote(dist);
    let l = l as f64;
    dist.frequencies()
        .filter(|(key, f)| **key != argmax && *f > 0.0)
        .map(|(_, f)| normal_upper_tail((l / 2.0 - l * f) / (l * f * (1.0 - f)).sqrt()))
        .sum()
}

fn check_setting(w: u32, l: u32) -> Result<(), ControlError> {
    if w == 0 || w > l {
        return Err(ControlError::Config(format!("need 1 <= w <= L, got w={w}, L={l}")));
    }
    Ok(())
}

fn cost_for_item(dist: &AnswerDistribution, w0: u32, w: u32, l: u32) -> f64 {
    let q = stop_probability(dist, w);
    let m = l / w;
    let mut cost = w0 as f64;
    let mut continue_prob = 1.0; // (1-q)^j
    for j in 0..m {
        cost += q * continue_prob * (j * w) as f64;
        continue_prob *= 1.0 - q;
    }
    // The no-stop term is a single event, applied once (D9).
    cost + continue_prob * l as f64
}

fn inconsistency_for_item(dist: &AnswerDistribution, w: u32, l: u32) -> f64 {
    let q = stop_probability(dist, w);
    let m = l / w;
    let no_stop = (1.0 - q).powi(m as i32);
    (1.0 - no_stop) * inconsistency_with_stop(dist, w)
        + no_stop * inconsistency_without_stop(dist, l)
}

/// Expected mean sampling cost per item for a candidate (w, L): the first
/// window's w0 plus j·w for a stop after j further windows, plus the full
/// budget L if no window stops (applied once, D9/D13).
pub fn expected_sampling_cost(fw: &FirstWindowSet, w: u32, l: u32) -> Result<f64, ControlError> {
    check_setting(w, l)?;
    let w0 = fw.first_window_size();
    let sum: f64 = fw.distributions().iter().map(|d| cost_for_item(d, w0, w, l)).sum();
    Ok(sum / fw.len() as f64)
}

/// Upper bound on the expected probability that the early-stopped vote
/// disagrees with argmax P̂, mixing the with-stop and no-stop bounds by the
/// stop probability over ⌊L/w⌋ windows.
pub fn expected_inconsistency(fw: &FirstWindowSet, w: u32, l: u32) -> Result<f64, ControlError> {
    check_setting(w, l)?;
    let sum: f64 = fw.distributions().iter().map(|d| inconsistency_for_item(d, w, l)).sum();
    Ok(sum / fw.len() as f64)
}

/// Predicted cost and inconsistency bound for one candidate setting.
/// `inconsistency_bound` is stored raw (sums of tails can exceed 1 for
/// many-way near-ties); reports clamp it (D11).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPrediction {
    pub window_size: u32,
    pub max_samples: u32,
    pub expected_cost: f64,
    pub inconsistency_bound: f64,
}

impl ControlPrediction {
    pub fn clamped_inconsistency(&self) -> f64 {
        self.inconsistency_bound.min(1.0)
    }
}

/// A budget/performance request over a candidate grid of (w, L) settings.
#[derive(Debug, Clone)]
pub struct PlanRequest {
    /// Max acceptable expected samples per item.
    pub budget: f64,
    /// Max acceptable inconsistency bound.
    pub performance_target: f64,
    pub grid: Vec<(u32, u32)>,
}

/// Predictions for every grid candidate, ordered by ascending expected cost
/// with ties broken toward the larger window (D12).
pub fn prediction_table(
    fw: &FirstWindowSet,
    grid: &[(u32, u32)],
) -> Result<Vec<ControlPrediction>, ControlError> {
    if grid.is_empty() {
        return Err(ControlError::Config("candidate grid is empty".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    for &(w, l) in grid {
        table.push(ControlPrediction {
            window_size: w,
            max_samples: l,
            expected_cost: expected_sampling_cost(fw, w, l)?,
            inconsistency_bound: expected_inconsistency(fw, w, l)?,
        });
    }
    table.sort_by(|a, b| {
        a.expected_cost
            .total_cmp(&b.expected_cost)
            .then(b.window_size.cmp(&a.window_size))
    });
    Ok(table)
}

/// Picks the first candidate (in D12 order) whose predictions meet the
/// request. On failure the full table rides along for operator inspection.
pub fn plan(fw: &FirstWindowSet, request: &PlanRequest) -> Result<ControlPrediction, ControlError> {
    let table = prediction_table(fw, &request.grid)?;
    table
        .iter()
        .find(|p| {
            p.expected_cost <= request.budget && p.inconsistency_bound <= request.performance_target
        })
        .cloned()
        .ok_or(ControlError::NoFeasiblePlan { table })
}
