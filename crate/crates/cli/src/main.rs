//! Experiment runner for early-stopping self-consistency: run sc/esc/ent
//! over a dataset, predict cost/risk per (window, budget) candidate and pick
//! a plan, or validate the engine against its closed-form cost oracle.

mod common;
mod predict_cmd;
mod run_cmd;
mod simulate_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::GeneratorKind;

#[derive(Parser)]
#[command(name = "esc", version, about = "Early-stopping self-consistency experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sampling experiment over a dataset and write a run log + metrics.
    Run(RunArgs),
    /// Probe first windows, predict cost/inconsistency per grid candidate,
    /// and pick the cheapest feasible plan.
    Predict(PredictArgs),
    /// Monte Carlo validation of the engine against the exact cost formula.
    Simulate(SimulateArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Dataset JSONL. Synthetic runs read SyntheticItemSpec records here.
    #[arg(long)]
    dataset: PathBuf,
    /// Sampling strategy: sc, esc or ent.
    #[arg(long, default_value = "esc")]
    method: String,
    #[arg(long, value_enum, default_value = "synthetic")]
    generator: GeneratorKind,
    /// Window size w.
    #[arg(long, default_value_t = 5)]
    window_size: u32,
    /// Sampling budget L.
    #[arg(long, default_value_t = 40)]
    max_samples: u32,
    /// First window size w0 (defaults to the window size).
    #[arg(long)]
    first_window: Option<u32>,
    /// Normalized-entropy cutoff for the ent method.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Master seed; all randomness in simulation mode derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker pool size (1 keeps baseline runs bit-exact by construction).
    #[arg(long, default_value_t = 1)]
    concurrency: usize,
    /// Output directory for run_log.jsonl and metrics.
    #[arg(long)]
    out: PathBuf,
    /// Pricing JSON (rates per million tokens, keyed by model name).
    #[arg(long)]
    pricing: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for endpoint runs (and pricing lookup).
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    /// Sampling temperature (default: 0.5 for boxed-math datasets, 0.7 otherwise).
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    top_p: f64,
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    /// Request timeout in seconds for endpoint runs.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// Continue an interrupted run log, skipping completed items.
    #[arg(long)]
    resume: bool,
}

#[derive(clap::Args)]
struct PredictArgs {
    /// Dataset JSONL. Synthetic runs read SyntheticItemSpec records here.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "synthetic")]
    generator: GeneratorKind,
    /// Candidate (w, L) grid, e.g. "5x40,8x64".
    #[arg(long)]
    grid: String,
    /// Max acceptable expected samples per item B.
    #[arg(long)]
    budget: f64,
    /// Max acceptable inconsistency bound P.
    #[arg(long)]
    target: f64,
    /// Probe window size w0.
    #[arg(long, default_value_t = 5)]
    first_window: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    top_p: f64,
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// Execute the chosen plan immediately, reusing the probe windows.
    #[arg(long)]
    execute: bool,
    /// Execute every grid candidate and report predicted-vs-actual fidelity.
    #[arg(long)]
    execute_grid: bool,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// SyntheticItemSpec JSONL.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 5)]
    window_size: u32,
    #[arg(long, default_value_t = 40)]
    max_samples: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated entropy cutoffs to sweep with the ent baseline.
    #[arg(long)]
    theta_sweep: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_cmd::run(args),
        Command::Predict(args) => predict_cmd::run(args),
        Command::Simulate(args) => simulate_cmd::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
