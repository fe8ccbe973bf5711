//! Shared plumbing for the subcommands: config echo + hashing, generator
//! construction, and exit-code mapping.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use esc_core::endpoint::{EndpointConfig, EndpointGenerator};
use esc_core::engine::EngineError;
use esc_core::extract::TaskKind;
use esc_core::generate::{Generator, GeneratorError, SamplerParams, SyntheticGenerator};
use esc_core::harness::{
    dataset_from_synthetic, load_dataset, load_synthetic_specs, DatasetItem, HarnessError,
};

/// Errors carrying the documented exit codes: 1 config, 2 generator,
/// 3 I/O, 4 no feasible plan.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Generator(String),
    Io(String),
    NoFeasiblePlan,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Generator(_) => 2,
            CliError::Io(_) => 3,
            CliError::NoFeasiblePlan => 4,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Config(m) => format!("configuration error: {m}"),
            CliError::Generator(m) => format!("generator failure: {m}"),
            CliError::Io(m) => format!("i/o error: {m}"),
            CliError::NoFeasiblePlan => "no feasible plan for the requested budget/target".into(),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io(io) => CliError::Io(io.to_string()),
            HarnessError::Engine(engine) => engine.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Generator(g) => CliError::Generator(g.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<GeneratorError> for CliError {
    fn from(e: GeneratorError) -> Self {
        CliError::Generator(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// The experiment-identity configuration echoed into every run log header.
/// Output paths and worker counts are excluded: they cannot affect outcomes.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub command: String,
    pub dataset: String,
    pub method: Option<String>,
    pub generator: String,
    pub window_size: u32,
    pub max_samples: u32,
    pub first_window: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub seed: u64,
    pub temperature: f64,
    pub top_p: f64,
    pub max_generation_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pricing: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

impl ConfigEcho {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config echo serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex_prefix(&digest, 16)
    }

    pub fn as_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config echo serializes")
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
        if out.len() >= chars {
            break;
        }
    }
    out.truncate(chars);
    out
}

/// Which backend supplies samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GeneratorKind {
    Synthetic,
    Endpoint,
}

impl GeneratorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorKind::Synthetic => "synthetic",
            GeneratorKind::Endpoint => "endpoint",
        }
    }
}

/// Dataset plus its generator. Synthetic runs read the dataset path as
/// synthetic item specs; endpoint runs read an ordinary dataset.
pub struct Workload {
    pub items: Vec<DatasetItem>,
    pub generator: Box<dyn Generator>,
    pub deterministic_timing: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn load_workload(
    kind: GeneratorKind,
    dataset: &Path,
    endpoint: Option<&str>,
    model: Option<&str>,
    api_key_env: &str,
    timeout_secs: u64,
    max_retries: u32,
    concurrency: usize,
) -> Result<Workload, CliError> {
    match kind {
        GeneratorKind::Synthetic => {
            let specs = load_synthetic_specs(dataset)?;
            if specs.is_empty() {
                return Err(CliError::Config(format!(
                    "no synthetic items in {}",
                    dataset.display()
                )));
            }
            let items = dataset_from_synthetic(&specs);
            let generator = SyntheticGenerator::new(specs)?;
            Ok(Workload { items, generator: Box::new(generator), deterministic_timing: true })
        }
        GeneratorKind::Endpoint => {
            let items = load_dataset(dataset)?;
            if items.is_empty() {
                return Err(CliError::Config(format!("no items in {}", dataset.display())));
            }
            let base_url = endpoint
                .ok_or_else(|| CliError::Config("--endpoint is required for endpoint runs".into()))?;
            let model_name = model
                .ok_or_else(|| CliError::Config("--model is required for endpoint runs".into()))?;
            let generator = EndpointGenerator::new(EndpointConfig {
                base_url: base_url.to_string(),
                model_name: model_name.to_string(),
                api_key_env: api_key_env.to_string(),
                timeout: Duration::from_secs(timeout_secs),
                max_retries,
                max_in_flight: concurrency.max(1) as u32,
                ..EndpointConfig::default()
            })?;
            Ok(Workload { items, generator: Box::new(generator), deterministic_timing: false })
        }
    }
}

/// Temperature default per task family when the operator gives none: 0.5
/// when the whole dataset is boxed math, 0.7 otherwise.
pub fn resolve_sampler(
    items: &[DatasetItem],
    temperature: Option<f64>,
    top_p: f64,
    max_tokens: u32,
    seed: u64,
) -> SamplerParams {
    let default_kind = if items.iter().all(|i| i.kind == TaskKind::BoxedMath) {
        TaskKind::BoxedMath
    } else {
        TaskKind::RawString
    };
    let mut params = SamplerParams::for_kind(default_kind, seed);
    if let Some(t) = temperature {
        params.temperature = t;
    }
    params.top_p = top_p;
    params.max_generation_tokens = max_tokens;
    params
}

/// Parses a candidate grid like "5x40,8x64".
pub fn parse_grid(spec: &str) -> Result<Vec<(u32, u32)>, CliError> {
    let mut grid = Vec::new();
    let mut seen = HashSet::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (w, l) = part
            .split_once('x')
            .ok_or_else(|| CliError::Config(format!("bad grid entry {part:?}, expected WxL")))?;
        let w: u32 = w
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad window size in grid entry {part:?}")))?;
        let l: u32 = l
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad budget in grid entry {part:?}")))?;
        if seen.insert((w, l)) {
            grid.push((w, l));
        }
    }
    if grid.is_empty() {
        return Err(CliError::Config("the candidate grid is empty".into()));
    }
    Ok(grid)
}

pub fn ensure_out_dir(out: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out)?;
    Ok(out.to_path_buf())
}

pub fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)?;
    Ok(())
}
