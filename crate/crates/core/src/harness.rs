//! Dataset ingestion, experiment orchestration, metrics, cost accounting,
//! and run-record persistence.
//!
//! Items run concurrently on a bounded worker pool; the run-log writer is
//! single-owner and emits records in dataset order regardless of completion
//! order, flushed per item so interrupted runs resume by id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    paired_esc_sc, run_entropy_threshold, run_esc, run_sc, EngineError, EscConfig, EscOutcome,
    ItemContext,
};
use crate::extract::{canonicalize, TaskKind};
use crate::generate::{Generator, Message, SyntheticItemSpec};
use crate::voting::{AnswerKey, TokenUsage};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate item id: {0}")]
    DuplicateId(String),
    #[error("item {0} is missing from the record/gold pairing")]
    MissingItem(String),
    #[error("record sets cover different items: {0}")]
    MismatchedItems(String),
    #[error("zero variance makes the correlation undefined")]
    DegenerateVariance,
    #[error("inputs have mismatched or insufficient length")]
    BadLength,
    #[error("invalid harness input: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One dataset item: a question, its canonical gold answer, the task kind
/// that selects the extraction rules, and optional few-shot demonstrations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub question: String,
    pub gold: AnswerKey,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demonstrations: Option<Vec<Message>>,
}

#[derive(Deserialize)]
struct RawDatasetItem {
    id: String,
    question: String,
    gold: String,
    kind: TaskKind,
    #[serde(default)]
    demonstrations: Option<Vec<Message>>,
}

/// Loads a JSONL dataset, canonicalizing gold answers and rejecting
/// duplicate ids.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, HarnessError> {
    let file = File::open(path)?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDatasetItem = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Parse { line: idx + 1, message: e.to_string() })?;
        if raw.id.is_empty() {
            return Err(HarnessError::Parse { line: idx + 1, message: "empty item id".into() });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(HarnessError::DuplicateId(raw.id));
        }
        items.push(DatasetItem {
            gold: canonicalize(&raw.gold, raw.kind),
            id: raw.id,
            question: raw.question,
            kind: raw.kind,
            demonstrations: raw.demonstrations,
        });
    }
    Ok(items)
}

/// Loads a JSONL file of synthetic item specs.
pub fn load_synthetic_specs(path: &Path) -> Result<Vec<SyntheticItemSpec>, HarnessError> {
    let file = File::open(path)?;
    let mut specs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let spec: SyntheticItemSpec = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Parse { line: idx + 1, message: e.to_string() })?;
        spec.validate()
            .map_err(|e| HarnessError::Parse { line: idx + 1, message: e.to_string() })?;
        if !seen.insert(spec.item_id.clone()) {
            return Err(HarnessError::DuplicateId(spec.item_id));
        }
        specs.push(spec);
    }
    Ok(specs)
}

/// Derives runnable dataset items from synthetic specs: raw-string items
/// whose generations are the answer keys themselves.
pub fn dataset_from_synthetic(specs: &[SyntheticItemSpec]) -> Vec<DatasetItem> {
    specs
        .iter()
        .map(|s| DatasetItem {
            id: s.item_id.clone(),
            question: format!("synthetic item {}", s.item_id),
            gold: canonicalize(&s.gold, TaskKind::RawString),
            kind: TaskKind::RawString,
            demonstrations: None,
        })
        .collect()
}

pub fn gold_map(items: &[DatasetItem]) -> BTreeMap<String, AnswerKey> {
    items.iter().map(|i| (i.id.clone(), i.gold.clone())).collect()
}

/// Sampling strategy of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sc,
    Esc,
    Ent,
}

/// One persisted per-item result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub item_id: String,
    pub method: Method,
    pub config_hash: String,
    pub vote: AnswerKey,
    pub correct: bool,
    pub samples_used: u32,
    pub windows_used: u32,
    pub stopped_early: bool,
    pub invalid_samples: u32,
    pub usage: TokenUsage,
    pub wall_time_ms: f64,
}

/// First line of every run log: the experiment-identity configuration,
/// echoed verbatim, plus its hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogHeader {
    pub config_hash: String,
    pub config: serde_json::Value,
    pub version: String,
}

/// $ per million tokens for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub prompt_per_million: f64,
    pub completion_per_million: f64,
}

/// Pricing keyed by model name.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PricingTable(pub BTreeMap<String, Pricing>);

impl PricingTable {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let table: PricingTable = serde_json::from_reader(File::open(path)?)
            .map_err(|e| HarnessError::Config(format!("bad pricing file: {e}")))?;
        for (model, pricing) in &table.0 {
            if pricing.prompt_per_million < 0.0 || pricing.completion_per_million < 0.0 {
                return Err(HarnessError::Config(format!("negative rate for model {model}")));
            }
        }
        Ok(table)
    }

    pub fn for_model(&self, model: &str) -> Option<Pricing> {
        self.0.get(model).copied()
    }
}

/// Aggregate metrics over one run (plus optional comparison fields).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub items: usize,
    pub accuracy_pct: f64,
    /// Mean samples consumed per item (the paper's L̂).
    pub mean_samples: f64,
    pub mean_windows: f64,
    pub stopped_early_pct: f64,
    pub invalid_rate_pct: f64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub mean_prompt_tokens: f64,
    pub mean_completion_tokens: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_per_item: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intersection_ratio_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planner_fidelity: Option<PlannerFidelity>,
}

/// Agreement between predicted and actual mean sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerFidelity {
    pub pearson: f64,
    pub mean_l1: f64,
}

impl MetricsReport {
    /// Key/value summary, one line per metric, tab-delimited.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('\t');
            out.push_str(&v);
            out.push('\n');
        };
        push("items", self.items.to_string());
        push("accuracy_pct", format!("{:.4}", self.accuracy_pct));
        push("mean_samples", format!("{:.4}", self.mean_samples));
        push("mean_windows", format!("{:.4}", self.mean_windows));
        push("stopped_early_pct", format!("{:.4}", self.stopped_early_pct));
        push("invalid_rate_pct", format!("{:.4}", self.invalid_rate_pct));
        push("total_prompt_tokens", self.total_prompt_tokens.to_string());
        push("total_completion_tokens", self.total_completion_tokens.to_string());
        push("mean_prompt_tokens", format!("{:.4}", self.mean_prompt_tokens));
        push("mean_completion_tokens", format!("{:.4}", self.mean_completion_tokens));
        if let Some(cost) = self.cost_per_item {
            push("cost_per_item", format!("{cost:.6}"));
        }
        if let Some(ir) = self.intersection_ratio_pct {
            push("intersection_ratio_pct", format!("{ir:.4}"));
        }
        if let Some(pf) = self.planner_fidelity {
            push("planner_pearson", format!("{:.6}", pf.pearson));
            push("planner_mean_l1", format!("{:.6}", pf.mean_l1));
        }
        out
    }
}

/// Computes the metrics report for a complete run. Every record must have a
/// gold entry and every gold item a record.
pub fn evaluate(
    records: &[RunRecord],
    gold: &BTreeMap<String, AnswerKey>,
    pricing: Option<Pricing>,
) -> Result<MetricsReport, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Config("no records to evaluate".into()));
    }
    let mut seen = HashSet::new();
    for r in records {
        if !gold.contains_key(&r.item_id) {
            return Err(HarnessError::MissingItem(r.item_id.clone()));
        }
        if !seen.insert(&r.item_id) {
            return Err(HarnessError::DuplicateId(r.item_id.clone()));
        }
    }
    for id in gold.keys() {
        if !seen.contains(id) {
            return Err(HarnessError::MissingItem(id.clone()));
        }
    }

    let n = records.len();
    let correct = records.iter().filter(|r| r.correct).count();
    let mut total_usage = TokenUsage::default();
    let mut total_samples = 0u64;
    let mut total_windows = 0u64;
    let mut total_invalid = 0u64;
    let mut stopped = 0usize;
    for r in records {
        total_usage.add(r.usage);
        total_samples += r.samples_used as u64;
        total_windows += r.windows_used as u64;
        total_invalid += r.invalid_samples as u64;
        stopped += r.stopped_early as usize;
    }
    let cost_per_item = pricing.map(|p| {
        (total_usage.prompt_tokens as f64 * p.prompt_per_million
            + total_usage.completion_tokens as f64 * p.completion_per_million)
            / 1e6
            / n as f64
    });
    Ok(MetricsReport {
        items: n,
        accuracy_pct: 100.0 * correct as f64 / n as f64,
        mean_samples: total_samples as f64 / n as f64,
        mean_windows: total_windows as f64 / n as f64,
        stopped_early_pct: 100.0 * stopped as f64 / n as f64,
        invalid_rate_pct: 100.0 * total_invalid as f64 / total_samples as f64,
        total_prompt_tokens: total_usage.prompt_tokens,
        total_completion_tokens: total_usage.completion_tokens,
        mean_prompt_tokens: total_usage.prompt_tokens as f64 / n as f64,
        mean_completion_tokens: total_usage.completion_tokens as f64 / n as f64,
        cost_per_item,
        intersection_ratio_pct: None,
        planner_fidelity: None,
    })
}

/// Percentage of items on which two runs return the same vote.
pub fn intersection_ratio(a: &[RunRecord], b: &[RunRecord]) -> Result<f64, HarnessError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(HarnessError::MismatchedItems(format!(
            "{} records vs {}",
            a.len(),
            b.len()
        )));
    }
    let votes: HashMap<&str, &AnswerKey> =
        b.iter().map(|r| (r.item_id.as_str(), &r.vote)).collect();
    let mut matches = 0usize;
    for r in a {
        match votes.get(r.item_id.as_str()) {
            Some(v) => matches += (**v == r.vote) as usize,
            None => return Err(HarnessError::MismatchedItems(r.item_id.clone())),
        }
    }
    Ok(100.0 * matches as f64 / a.len() as f64)
}

/// Standard sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, HarnessError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(HarnessError::BadLength);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(HarnessError::DegenerateVariance);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Mean absolute difference.
pub fn mean_l1(xs: &[f64], ys: &[f64]) -> Result<f64, HarnessError> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(HarnessError::BadLength);
    }
    Ok(xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / xs.len() as f64)
}

/// How a whole experiment runs over a dataset.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub esc: EscConfig,
    /// Entropy cutoff, used by `Method::Ent` only.
    pub theta: f64,
    pub concurrency: usize,
    /// Zeroes per-record wall time so synthetic run logs replay byte-exact.
    pub deterministic_timing: bool,
}

fn item_context(item: &DatasetItem) -> ItemContext {
    let mut prompt = item.demonstrations.clone().unwrap_or_default();
    prompt.push(Message::new("user", item.question.clone()));
    ItemContext::new(item.id.clone(), prompt, item.kind)
}

/// Builds the persisted record for one outcome, grading the vote against
/// the item's gold answer.
pub fn record_from_outcome(
    item: &DatasetItem,
    method: Method,
    config_hash: &str,
    outcome: &EscOutcome,
    wall_time_ms: f64,
) -> RunRecord {
    RunRecord {
        item_id: item.id.clone(),
        method,
        config_hash: config_hash.to_string(),
        vote: outcome.vote.clone(),
        correct: outcome.vote == item.gold,
        samples_used: outcome.samples_used,
        windows_used: outcome.windows_used,
        stopped_early: outcome.stopped_early,
        invalid_samples: outcome.samples.iter().filter(|s| s.answer.is_invalid()).count() as u32,
        usage: outcome.usage_total,
        wall_time_ms,
    }
}

fn run_one(
    generator: &dyn Generator,
    item: &DatasetItem,
    cfg: &ExperimentConfig,
    config_hash: &str,
) -> Result<RunRecord, HarnessError> {
    let context = item_context(item);
    let start = Instant::now();
    let outcome = match cfg.method {
        Method::Sc => run_sc(generator, &context, cfg.esc.max_samples, cfg.esc.sampler)?,
        Method::Esc => run_esc(generator, &context, &cfg.esc, None)?,
        Method::Ent => {
            run_entropy_threshold(generator, &context, cfg.esc.max_samples, cfg.theta, cfg.esc.sampler)?
        }
    };
    let wall = if cfg.deterministic_timing { 0.0 } else { start.elapsed().as_secs_f64() * 1e3 };
    Ok(record_from_outcome(item, cfg.method, config_hash, &outcome, wall))
}

/// Runs the experiment over all items not in `skip`, invoking `on_record`
/// in dataset order as results complete (the single-owner writer). Returns
/// the emitted records in dataset order.
pub fn run_experiment(
    generator: &dyn Generator,
    items: &[DatasetItem],
    cfg: &ExperimentConfig,
    config_hash: &str,
    skip: &HashSet<String>,
    mut on_record: impl FnMut(&RunRecord) -> Result<(), HarnessError>,
) -> Result<Vec<RunRecord>, HarnessError> {
    let todo: Vec<&DatasetItem> = items.iter().filter(|i| !skip.contains(&i.id)).collect();
    let mut records: Vec<RunRecord> = Vec::with_capacity(todo.len());

    if cfg.concurrency <= 1 {
        for item in todo {
            let record = run_one(generator, item, cfg, config_hash)?;
            on_record(&record)?;
            records.push(record);
        }
        return Ok(records);
    }

    let next = AtomicUsize::new(0);
    let cancel = AtomicBool::new(false);
    let mut first_error: Option<HarnessError> = None;
    let mut buffer: BTreeMap<usize, RunRecord> = BTreeMap::new();
    let mut next_emit = 0usize;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<RunRecord, HarnessError>)>();
        for _ in 0..cfg.concurrency {
            let tx = tx.clone();
            let todo = &todo;
            let next = &next;
            let cancel = &cancel;
            scope.spawn(move || loop {
                if cancel.load(Ordering::Relaxed) {
                    break;
                }
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= todo.len() {
                    break;
                }
                let result = run_one(generator, todo[idx], cfg, config_hash);
                if tx.send((idx, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for (idx, result) in rx {
            match result {
                Ok(record) => {
                    buffer.insert(idx, record);
                    while let Some(record) = buffer.remove(&next_emit) {
                        if first_error.is_none() {
                            if let Err(e) = on_record(&record) {
                                first_error = Some(e);
                                cancel.store(true, Ordering::Relaxed);
                            }
                        }
                        records.push(record);
                        next_emit += 1;
                    }
                }
                Err(e) => {
                    if first_error.is_none() {
                        first_error = Some(e);
                    }
                    cancel.store(true, Ordering::Relaxed);
                }
            }
        }
    });

    match first_error {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

/// Runs ESC and SC per item on one shared stream (ESC's samples are a
/// prefix of SC's), for intersection and paired-accuracy comparisons.
pub fn run_paired_experiment(
    generator: &dyn Generator,
    items: &[DatasetItem],
    esc: &EscConfig,
    config_hash: &str,
) -> Result<(Vec<RunRecord>, Vec<RunRecord>), HarnessError> {
    let mut esc_records = Vec::with_capacity(items.len());
    let mut sc_records = Vec::with_capacity(items.len());
    for item in items {
        let context = item_context(item);
        let (esc_out, sc_out) = paired_esc_sc(generator, &context, esc, None)?;
        esc_records.push(record_from_outcome(item, Method::Esc, config_hash, &esc_out, 0.0));
        sc_records.push(record_from_outcome(item, Method::Sc, config_hash, &sc_out, 0.0));
    }
    Ok((esc_records, sc_records))
}

/// Writes the header line of a run log.
pub fn write_log_header(out: &mut impl Write, header: &RunLogHeader) -> Result<(), HarnessError> {
    serde_json::to_writer(&mut *out, header)
        .map_err(|e| HarnessError::Config(format!("serializing header: {e}")))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Appends one record line, flushed immediately (D19).
pub fn append_record(out: &mut impl Write, record: &RunRecord) -> Result<(), HarnessError> {
    serde_json::to_writer(&mut *out, record)
        .map_err(|e| HarnessError::Config(format!("serializing record: {e}")))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Reads a run log back: the header plus every complete record line.
pub fn read_run_log(path: &Path) -> Result<(RunLogHeader, Vec<RunRecord>), HarnessError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| HarnessError::Parse { line: 1, message: "empty run log".into() })??;
    let header: RunLogHeader = serde_json::from_str(&header_line)
        .map_err(|e| HarnessError::Parse { line: 1, message: e.to_string() })?;
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Parse { line: idx + 2, message: e.to_string() })?;
        records.push(record);
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{SamplerParams, SyntheticGenerator};

    fn record(id: &str, vote: &str, correct: bool, samples: u32) -> RunRecord {
        RunRecord {
            item_id: id.into(),
            method: Method::Esc,
            config_hash: "h".into(),
            vote: AnswerKey::valid(vote),
            correct,
            samples_used: samples,
            windows_used: 1,
            stopped_early: false,
            invalid_samples: 0,
            usage: TokenUsage::new(1000, 2000),
            wall_time_ms: 0.0,
        }
    }

    fn golds(ids: &[(&str, &str)]) -> BTreeMap<String, AnswerKey> {
        ids.iter().map(|(id, g)| (id.to_string(), AnswerKey::valid(*g))).collect()
    }

    #[test]
    fn load_dataset_parses_and_guards() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"q1","question":"…","gold":"52","kind":"boxed_math"}"#,
                "\n",
                r#"{"id":"q2","question":"…","gold":" Yes. ","kind":"yes_no"}"#,
                "\n",
            ),
        )
        .unwrap();
        let items = load_dataset(&path).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].gold, AnswerKey::valid("52"));
        assert_eq!(items[1].gold, AnswerKey::valid("yes"));

        let bad = dir.path().join("bad.jsonl");
        let mut lines: Vec<String> = (1..=6)
            .map(|i| format!(r#"{{"id":"q{i}","question":"x","gold":"1","kind":"last_number"}}"#))
            .collect();
        lines.push("{not json".into());
        std::fs::write(&bad, lines.join("\n")).unwrap();
        match load_dataset(&bad) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }

        let dup = dir.path().join("dup.jsonl");
        std::fs::write(
            &dup,
            concat!(
                r#"{"id":"q1","question":"x","gold":"1","kind":"last_number"}"#,
                "\n",
                r#"{"id":"q1","question":"y","gold":"2","kind":"last_number"}"#,
                "\n",
            ),
        )
        .unwrap();
        assert!(matches!(load_dataset(&dup), Err(HarnessError::DuplicateId(id)) if id == "q1"));
    }

    #[test]
    fn evaluate_computes_the_headline_metrics() {
        let mut records = vec![
            record("a", "1", true, 5),
            record("b", "1", true, 5),
            record("c", "1", true, 10),
            record("d", "1", false, 40),
        ];
        records[3].invalid_samples = 6;
        let gold = golds(&[("a", "1"), ("b", "1"), ("c", "1"), ("d", "2")]);
        let report = evaluate(&records, &gold, None).unwrap();
        assert_eq!(report.accuracy_pct, 75.0);
        assert_eq!(report.mean_samples, 15.0);
        assert_eq!(report.total_prompt_tokens, 4000);
        assert_eq!(report.invalid_rate_pct, 10.0);
        assert!(report.cost_per_item.is_none());
    }

    #[test]
    fn evaluate_prices_tokens_per_item() {
        // 1,000 prompt + 2,000 completion per item at 0.5/1M and 1.5/1M.
        let records = vec![record("a", "1", true, 5)];
        let gold = golds(&[("a", "1")]);
        let pricing = Pricing { prompt_per_million: 0.5, completion_per_million: 1.5 };
        let report = evaluate(&records, &gold, Some(pricing)).unwrap();
        assert!((report.cost_per_item.unwrap() - 0.0035).abs() < 1e-12);
    }

    #[test]
    fn evaluate_requires_full_coverage() {
        let records = vec![record("a", "1", true, 5)];
        let gold = golds(&[("a", "1"), ("b", "1")]);
        assert!(matches!(evaluate(&records, &gold, None), Err(HarnessError::MissingItem(_))));
        let gold = golds(&[]);
        assert!(matches!(evaluate(&records, &gold, None), Err(HarnessError::MissingItem(_))));
    }

    #[test]
    fn intersection_ratio_counts_matching_votes() {
        let a = vec![record("a", "1", true, 5), record("b", "2", true, 5)];
        let same = a.clone();
        assert_eq!(intersection_ratio(&a, &same).unwrap(), 100.0);

        let mut b = a.clone();
        b[1].vote = AnswerKey::valid("3");
        assert_eq!(intersection_ratio(&a, &b).unwrap(), 50.0);

        let disjoint = vec![record("a", "9", true, 5), record("b", "9", true, 5)];
        assert_eq!(intersection_ratio(&a, &disjoint).unwrap(), 0.0);

        let other_items = vec![record("a", "1", true, 5), record("z", "2", true, 5)];
        assert!(intersection_ratio(&a, &other_items).is_err());
    }

    #[test]
    fn pearson_and_l1_hand_cases() {
        let xs = [1.0, 2.0, 3.0];
        assert!((pearson(&xs, &[3.0, 5.0, 7.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            pearson(&xs, &[2.0, 2.0, 2.0]),
            Err(HarnessError::DegenerateVariance)
        ));
        assert!((mean_l1(&xs, &[2.0, 2.0, 2.0]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn run_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let header = RunLogHeader {
            config_hash: "abc".into(),
            config: serde_json::json!({"seed": 7}),
            version: "0.1.0".into(),
        };
        let records = vec![record("a", "1", true, 5), record("b", "2", false, 40)];
        {
            let mut out = File::create(&path).unwrap();
            write_log_header(&mut out, &header).unwrap();
            for r in &records {
                append_record(&mut out, r).unwrap();
            }
        }
        let (header_back, records_back) = read_run_log(&path).unwrap();
        assert_eq!(header_back, header);
        assert_eq!(records_back, records);
    }

    fn synthetic_items(n: usize) -> (SyntheticGenerator, Vec<DatasetItem>) {
        let specs: Vec<SyntheticItemSpec> = (0..n)
            .map(|i| SyntheticItemSpec::new(format!("i{i}"), [("a", 0.6), ("b", 0.4)], "a"))
            .collect();
        let items = dataset_from_synthetic(&specs);
        (SyntheticGenerator::new(specs).unwrap(), items)
    }

    fn experiment_config(concurrency: usize) -> ExperimentConfig {
        ExperimentConfig {
            method: Method::Esc,
            esc: EscConfig::new(5, 20, SamplerParams { seed: 5, ..SamplerParams::default() }),
            theta: 0.0,
            concurrency,
            deterministic_timing: true,
        }
    }

    #[test]
    fn worker_pool_size_does_not_change_the_log() {
        let (gen, items) = synthetic_items(24);
        let sequential =
            run_experiment(&gen, &items, &experiment_config(1), "h", &HashSet::new(), |_| Ok(()))
                .unwrap();
        let concurrent =
            run_experiment(&gen, &items, &experiment_config(4), "h", &HashSet::new(), |_| Ok(()))
                .unwrap();
        assert_eq!(sequential, concurrent);
    }

    #[test]
    fn skip_set_resumes_by_id() {
        let (gen, items) = synthetic_items(6);
        let all =
            run_experiment(&gen, &items, &experiment_config(1), "h", &HashSet::new(), |_| Ok(()))
                .unwrap();
        let done: HashSet<String> = ["i0", "i1"].iter().map(|s| s.to_string()).collect();
        let rest =
            run_experiment(&gen, &items, &experiment_config(1), "h", &done, |_| Ok(())).unwrap();
        assert_eq!(rest.len(), 4);
        assert_eq!(rest[..], all[2..]);
    }

    #[test]
    fn replaying_a_persisted_log_reproduces_the_report() {
        let (gen, items) = synthetic_items(12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut out = File::create(&path).unwrap();
        let header = RunLogHeader {
            config_hash: "h".into(),
            config: serde_json::json!({}),
            version: "0.1.0".into(),
        };
        write_log_header(&mut out, &header).unwrap();
        let records =
            run_experiment(&gen, &items, &experiment_config(1), "h", &HashSet::new(), |r| {
                append_record(&mut out, r)
            })
            .unwrap();
        out.flush().unwrap();

        let gold = gold_map(&items);
        let direct = evaluate(&records, &gold, None).unwrap();
        let (_, replayed) = read_run_log(&path).unwrap();
        let from_log = evaluate(&replayed, &gold, None).unwrap();
        assert_eq!(direct, from_log);
    }

    #[test]
    fn paired_accuracy_gap_is_bounded_by_the_intersection_defect() {
        let (gen, items) = synthetic_items(300);
        let esc = EscConfig::new(5, 40, SamplerParams { seed: 3, ..SamplerParams::default() });
        let (esc_records, sc_records) = run_paired_experiment(&gen, &items, &esc, "h").unwrap();
        let gold = gold_map(&items);
        let esc_report = evaluate(&esc_records, &gold, None).unwrap();
        let sc_report = evaluate(&sc_records, &gold, None).unwrap();
        let ir = intersection_ratio(&esc_records, &sc_records).unwrap();
        let gap = (esc_report.accuracy_pct - sc_report.accuracy_pct).abs();
        assert!(gap <= (100.0 - ir) + 1e-9, "gap {gap}, intersection {ir}");
    }

    #[test]
    fn cost_totals_are_integer_exact_sums() {
        let (gen, items) = synthetic_items(10);
        let records =
            run_experiment(&gen, &items, &experiment_config(1), "h", &HashSet::new(), |_| Ok(()))
                .unwrap();
        let gold = gold_map(&items);
        let report = evaluate(&records, &gold, None).unwrap();
        let prompt: u64 = records.iter().map(|r| r.usage.prompt_tokens).sum();
        let completion: u64 = records.iter().map(|r| r.usage.completion_tokens).sum();
        assert_eq!(report.total_prompt_tokens, prompt);
        assert_eq!(report.total_completion_tokens, completion);
    }
}
