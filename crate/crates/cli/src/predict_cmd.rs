//! `esc predict`: probe every item with one first window, predict cost and
//! inconsistency per grid candidate, pick a plan, and optionally execute it
//! reusing the probes.

use std::fs::File;

use esc_core::control::{
    plan, prediction_table, ControlError, ControlPrediction, FirstWindowSet, PlanRequest,
};
use esc_core::engine::{draw_first_window, run_esc, EscConfig, ItemContext};
use esc_core::generate::{Message, SamplerParams};
use esc_core::harness::{
    append_record, evaluate, gold_map, record_from_outcome, write_log_header, DatasetItem, Method,
    PlannerFidelity, RunLogHeader, RunRecord, {mean_l1, pearson},
};
use esc_core::voting::Window;

use crate::common::{
    ensure_out_dir, load_workload, parse_grid, resolve_sampler, write_text, CliError, ConfigEcho,
};
use crate::PredictArgs;

fn item_context(item: &DatasetItem) -> ItemContext {
    let mut prompt = item.demonstrations.clone().unwrap_or_default();
    prompt.push(Message::new("user", item.question.clone()));
    ItemContext::new(item.id.clone(), prompt, item.kind)
}

fn render_table(table: &[ControlPrediction]) -> String {
    let mut out =
        String::from("window_size\tmax_samples\texpected_cost\tinconsistency_bound\tclamped\n");
    for p in table {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6e}\t{:.6}\n",
            p.window_size,
            p.max_samples,
            p.expected_cost,
            p.inconsistency_bound,
            p.clamped_inconsistency()
        ));
    }
    out
}

pub fn run(args: &PredictArgs) -> Result<(), CliError> {
    let grid = parse_grid(&args.grid)?;
    if args.first_window == 0 {
        return Err(CliError::Config("--first-window must be positive".into()));
    }

    let workload = load_workload(
        args.generator,
        &args.dataset,
        args.endpoint.as_deref(),
        args.model.as_deref(),
        &args.api_key_env,
        args.timeout,
        args.max_retries,
        1,
    )?;
    let sampler =
        resolve_sampler(&workload.items, args.temperature, args.top_p, args.max_tokens, args.seed);

    let echo = ConfigEcho {
        command: "predict".into(),
        dataset: args.dataset.display().to_string(),
        method: None,
        generator: args.generator.as_str().into(),
        window_size: 0,
        max_samples: 0,
        first_window: args.first_window,
        theta: None,
        seed: args.seed,
        temperature: sampler.temperature,
        top_p: sampler.top_p,
        max_generation_tokens: sampler.max_generation_tokens,
        endpoint: args.endpoint.clone(),
        model: args.model.clone(),
        pricing: None,
        grid: Some(args.grid.clone()),
        budget: Some(args.budget),
        target: Some(args.target),
    };
    let config_hash = echo.hash();
    let out_dir = ensure_out_dir(&args.out)?;

    // Probe: one first window per item, kept for reuse.
    let contexts: Vec<ItemContext> = workload.items.iter().map(item_context).collect();
    let mut windows: Vec<Window> = Vec::with_capacity(contexts.len());
    for context in &contexts {
        windows.push(draw_first_window(
            workload.generator.as_ref(),
            context,
            args.first_window,
            sampler,
        )?);
    }
    let fw = FirstWindowSet::from_windows(&windows).map_err(|e| CliError::Config(e.to_string()))?;

    let table = prediction_table(&fw, &grid).map_err(|e| CliError::Config(e.to_string()))?;
    let rendered = format!("config_hash\t{config_hash}\n{}", render_table(&table));
    write_text(&out_dir.join("prediction_table.tsv"), &rendered)?;
    print!("{rendered}");

    let request = PlanRequest { budget: args.budget, performance_target: args.target, grid };
    let choice = match plan(&fw, &request) {
        Ok(choice) => choice,
        Err(ControlError::NoFeasiblePlan { .. }) => return Err(CliError::NoFeasiblePlan),
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    println!(
        "chosen\tw={}\tL={}\texpected_cost={:.4}\tinconsistency_bound={:.6e}",
        choice.window_size, choice.max_samples, choice.expected_cost, choice.inconsistency_bound
    );

    if args.execute_grid {
        let fidelity = execute_grid(args, &workload, &contexts, &windows, &table, sampler)?;
        let mut out = String::from("window_size\tmax_samples\tpredicted\tactual\tabs_err\n");
        for row in &fidelity.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
                row.0, row.1, row.2, row.3, (row.2 - row.3).abs()
            ));
        }
        out.push_str(&format!(
            "pearson\t{:.6}\nmean_l1\t{:.6}\n",
            fidelity.stats.pearson, fidelity.stats.mean_l1
        ));
        write_text(&out_dir.join("planner_fidelity.tsv"), &out)?;
        print!("{out}");
    }

    if args.execute {
        execute_choice(args, &workload, &contexts, &windows, &choice, sampler, &config_hash)?;
    }
    Ok(())
}

struct GridFidelity {
    rows: Vec<(u32, u32, f64, f64)>,
    stats: PlannerFidelity,
}

fn execute_grid(
    args: &PredictArgs,
    workload: &crate::common::Workload,
    contexts: &[ItemContext],
    windows: &[Window],
    table: &[ControlPrediction],
    sampler: SamplerParams,
) -> Result<GridFidelity, CliError> {
    let _ = args;
    let mut rows = Vec::with_capacity(table.len());
    for prediction in table {
        let config = EscConfig::new(prediction.window_size, prediction.max_samples, sampler)
            .with_first_window(windows[0].len() as u32);
        let mut total = 0u64;
        for (context, window) in contexts.iter().zip(windows) {
            let outcome =
                run_esc(workload.generator.as_ref(), context, &config, Some(window.clone()))?;
            total += outcome.samples_used as u64;
        }
        let actual = total as f64 / contexts.len() as f64;
        rows.push((prediction.window_size, prediction.max_samples, prediction.expected_cost, actual));
    }
    let predicted: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let actual: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let stats = PlannerFidelity {
        pearson: pearson(&predicted, &actual).unwrap_or(f64::NAN),
        mean_l1: mean_l1(&predicted, &actual).map_err(|e| CliError::Config(e.to_string()))?,
    };
    Ok(GridFidelity { rows, stats })
}

fn execute_choice(
    args: &PredictArgs,
    workload: &crate::common::Workload,
    contexts: &[ItemContext],
    windows: &[Window],
    choice: &ControlPrediction,
    sampler: SamplerParams,
    config_hash: &str,
) -> Result<(), CliError> {
    let out_dir = ensure_out_dir(&args.out)?;
    let config = EscConfig::new(choice.window_size, choice.max_samples, sampler)
        .with_first_window(args.first_window);
    let log_path = out_dir.join("esc_run_log.jsonl");
    let mut log = File::create(&log_path)?;
    let echo_value = serde_json::json!({
        "command": "predict --execute",
        "chosen_window_size": choice.window_size,
        "chosen_max_samples": choice.max_samples,
    });
    write_log_header(
        &mut log,
        &RunLogHeader {
            config_hash: config_hash.to_string(),
            config: echo_value,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    )?;

    let mut records: Vec<RunRecord> = Vec::with_capacity(contexts.len());
    for ((item, context), window) in workload.items.iter().zip(contexts).zip(windows) {
        let outcome =
            run_esc(workload.generator.as_ref(), context, &config, Some(window.clone()))?;
        let record = record_from_outcome(item, Method::Esc, config_hash, &outcome, 0.0);
        append_record(&mut log, &record)?;
        records.push(record);
    }
    let gold = gold_map(&workload.items);
    let report = evaluate(&records, &gold, None)?;
    let tsv = format!(
        "config_hash\t{config_hash}\npredicted_cost\t{:.4}\nprediction_abs_err\t{:.4}\n{}",
        choice.expected_cost,
        (report.mean_samples - choice.expected_cost).abs(),
        report.to_tsv()
    );
    write_text(&out_dir.join("executed_metrics.tsv"), &tsv)?;
    print!("{tsv}");
    Ok(())
}
