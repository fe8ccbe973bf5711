//! `esc run`: execute sc/esc/ent over a dataset, streaming the run log and
//! writing the metrics report.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::path::PathBuf;

use esc_core::engine::EscConfig;
use esc_core::harness::{
    append_record, evaluate, gold_map, read_run_log, run_experiment, write_log_header,
    ExperimentConfig, Method, PricingTable, RunLogHeader,
};

use crate::common::{ensure_out_dir, load_workload, resolve_sampler, write_text, CliError, ConfigEcho};
use crate::RunArgs;

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let method = match args.method.as_str() {
        "sc" => Method::Sc,
        "esc" => Method::Esc,
        "ent" => Method::Ent,
        other => {
            return Err(CliError::Config(format!(
                "--method must be sc, esc or ent, got {other:?}"
            )))
        }
    };
    if !args.dataset.exists() {
        return Err(CliError::Config(format!(
            "--dataset path does not exist: {}",
            args.dataset.display()
        )));
    }

    let workload = load_workload(
        args.generator,
        &args.dataset,
        args.endpoint.as_deref(),
        args.model.as_deref(),
        &args.api_key_env,
        args.timeout,
        args.max_retries,
        args.concurrency,
    )?;
    let sampler =
        resolve_sampler(&workload.items, args.temperature, args.top_p, args.max_tokens, args.seed);

    let first_window = args.first_window.unwrap_or(args.window_size);
    let esc = EscConfig::new(args.window_size, args.max_samples, sampler)
        .with_first_window(first_window);
    if method != Method::Ent {
        esc.validate()?;
    }
    if method == Method::Ent && !(0.0..=1.0).contains(&args.theta) {
        return Err(CliError::Config(format!("--theta must be in [0, 1], got {}", args.theta)));
    }

    let echo = ConfigEcho {
        command: "run".into(),
        dataset: args.dataset.display().to_string(),
        method: Some(args.method.clone()),
        generator: args.generator.as_str().into(),
        window_size: args.window_size,
        max_samples: args.max_samples,
        first_window,
        theta: (method == Method::Ent).then_some(args.theta),
        seed: args.seed,
        temperature: sampler.temperature,
        top_p: sampler.top_p,
        max_generation_tokens: sampler.max_generation_tokens,
        endpoint: args.endpoint.clone(),
        model: args.model.clone(),
        pricing: args.pricing.as_ref().map(|p| p.display().to_string()),
        grid: None,
        budget: None,
        target: None,
    };
    let config_hash = echo.hash();

    let out_dir = ensure_out_dir(&args.out)?;
    let log_path = out_dir.join("run_log.jsonl");
    let (mut log, done) = open_log(&log_path, &echo, &config_hash, args.resume)?;

    let experiment = ExperimentConfig {
        method,
        esc,
        theta: args.theta,
        concurrency: args.concurrency,
        deterministic_timing: workload.deterministic_timing,
    };
    run_experiment(
        workload.generator.as_ref(),
        &workload.items,
        &experiment,
        &config_hash,
        &done,
        |record| append_record(&mut log, record),
    )?;
    drop(log);

    // Evaluate from the persisted log so resumed runs score all records.
    let (_, records) = read_run_log(&log_path)?;
    let gold = gold_map(&workload.items);
    let pricing = match (&args.pricing, &args.model) {
        (Some(path), model) => {
            let table = PricingTable::load(path)?;
            let name = model.clone().unwrap_or_else(|| "synthetic".into());
            table.for_model(&name)
        }
        _ => None,
    };
    let report = evaluate(&records, &gold, pricing)?;

    let tsv = format!("config_hash\t{config_hash}\n{}", report.to_tsv());
    write_text(&out_dir.join("metrics.tsv"), &tsv)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Config(format!("serializing report: {e}")))?;
    write_text(&out_dir.join("metrics.json"), &json)?;
    print!("{tsv}");
    log::info!("run complete: {} items, log at {}", records.len(), log_path.display());
    Ok(())
}

fn open_log(
    path: &PathBuf,
    echo: &ConfigEcho,
    config_hash: &str,
    resume: bool,
) -> Result<(File, HashSet<String>), CliError> {
    if path.exists() && resume {
        let (header, records) = read_run_log(path)?;
        if header.config_hash != config_hash {
            return Err(CliError::Config(format!(
                "cannot resume: existing log has config hash {}, this run is {config_hash}",
                header.config_hash
            )));
        }
        let done: HashSet<String> = records.into_iter().map(|r| r.item_id).collect();
        let log = OpenOptions::new().append(true).open(path)?;
        return Ok((log, done));
    }
    if path.exists() {
        return Err(CliError::Config(format!(
            "run log {} already exists; pass --resume to continue it or choose a fresh --out",
            path.display()
        )));
    }
    let mut log = File::create(path)?;
    let header = RunLogHeader {
        config_hash: config_hash.to_string(),
        config: echo.as_value(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_log_header(&mut log, &header)?;
    Ok((log, HashSet::new()))
}
