//! Early-stopping self-consistency: windowed majority-vote sampling that
//! halts when a window of answers is unanimous, a control scheme that
//! predicts sampling cost and inconsistency risk per (window, budget)
//! setting from one observed window, and the harness that runs and scores
//! experiments against synthetic or OpenAI-compatible generators.

pub mod control;
pub mod endpoint;
pub mod engine;
pub mod extract;
pub mod generate;
pub mod harness;
pub mod voting;

pub use control::{
    expected_inconsistency, expected_sampling_cost, normal_upper_tail, plan, prediction_table,
    stop_probability, ControlPrediction, FirstWindowSet, PlanRequest,
};
pub use engine::{
    exact_expected_cost, paired_esc_sc, run_entropy_threshold, run_esc, run_sc, EscConfig,
    EscOutcome, ItemContext,
};
pub use extract::{canonicalize, extract_answer, TaskKind};
pub use generate::{
    derive_stream, Generator, GeneratorRequest, Message, SamplerParams, SyntheticGenerator,
    SyntheticItemSpec,
};
pub use voting::{
    is_unanimous, tally, vote, window_entropy, AnswerDistribution, AnswerKey, Sample, TokenUsage,
    Window,
};
