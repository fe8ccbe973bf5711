//! `esc simulate`: Monte Carlo validation of the early-stopping engine
//! against its closed-form cost oracle, plus a disagreement-rate table and
//! an optional entropy-threshold sweep.

use std::collections::HashMap;

use esc_core::engine::{
    exact_expected_cost, run_entropy_threshold, run_esc, EscConfig, ItemContext,
};
use esc_core::extract::{canonicalize, TaskKind};
use esc_core::generate::{Message, SamplerParams, SyntheticGenerator};
use esc_core::harness::load_synthetic_specs;
use esc_core::voting::AnswerKey;

use crate::common::{ensure_out_dir, write_text, CliError};
use crate::SimulateArgs;

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    if args.trials == 0 {
        return Err(CliError::Config("--trials must be positive".into()));
    }
    let specs = load_synthetic_specs(&args.spec)?;
    if specs.is_empty() {
        return Err(CliError::Config(format!("no synthetic items in {}", args.spec.display())));
    }

    // Per-item distributions for oracle costs and minority detection, keyed
    // the same way the generator canonicalizes them.
    let mut probs_by_item: HashMap<String, Vec<(AnswerKey, f64)>> = HashMap::new();
    for spec in &specs {
        let entries: Vec<(AnswerKey, f64)> = spec
            .answer_distribution
            .iter()
            .map(|(k, &p)| (canonicalize(k, TaskKind::RawString), p))
            .collect();
        probs_by_item.insert(spec.item_id.clone(), entries);
    }
    let generator = SyntheticGenerator::new(specs.clone())?;

    let mut cost_table = String::from(
        "item_id\ttrials\tempirical_mean\texact_expected\trel_err\n",
    );
    let mut disagreement_table =
        String::from("item_id\ttrials\tearly_stop_rate\tminority_vote_rate\n");

    for spec in &specs {
        let context = ItemContext::new(
            spec.item_id.clone(),
            vec![Message::new("user", format!("synthetic item {}", spec.item_id))],
            TaskKind::RawString,
        );
        let entries = &probs_by_item[&spec.item_id];
        let probs: Vec<f64> = entries.iter().map(|(_, p)| *p).collect();
        let exact = exact_expected_cost(&probs, args.window_size, args.max_samples)?;
        let max_mass = probs.iter().cloned().fold(0.0, f64::max);

        let mut total = 0u64;
        let mut early = 0u64;
        let mut minority = 0u64;
        for trial in 0..args.trials {
            let sampler =
                SamplerParams { seed: args.seed.wrapping_add(trial), ..SamplerParams::default() };
            let config = EscConfig::new(args.window_size, args.max_samples, sampler);
            let outcome = run_esc(&generator, &context, &config, None)?;
            total += outcome.samples_used as u64;
            if outcome.stopped_early {
                early += 1;
                let vote_mass = entries
                    .iter()
                    .find(|(k, _)| *k == outcome.vote)
                    .map(|(_, p)| *p)
                    .unwrap_or(0.0);
                if vote_mass < max_mass {
                    minority += 1;
                }
            }
        }
        let empirical = total as f64 / args.trials as f64;
        cost_table.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
            spec.item_id,
            args.trials,
            empirical,
            exact,
            (empirical - exact).abs() / exact
        ));
        disagreement_table.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6e}\n",
            spec.item_id,
            args.trials,
            early as f64 / args.trials as f64,
            minority as f64 / args.trials as f64
        ));
    }

    let mut output = format!("{cost_table}\n{disagreement_table}");

    if let Some(sweep) = &args.theta_sweep {
        let thetas: Result<Vec<f64>, _> =
            sweep.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let thetas = thetas.map_err(|e| CliError::Config(format!("bad --theta-sweep: {e}")))?;
        if thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CliError::Config("--theta-sweep entries must be in [0, 1]".into()));
        }
        let sweep_trials = args.trials.min(2_000);
        let mut sweep_table = String::from("theta\tmean_cost\n");
        for &theta in &thetas {
            let mut total = 0u64;
            let mut runs = 0u64;
            for spec in &specs {
                let context = ItemContext::new(
                    spec.item_id.clone(),
                    vec![Message::new("user", format!("synthetic item {}", spec.item_id))],
                    TaskKind::RawString,
                );
                for trial in 0..sweep_trials {
                    let sampler = SamplerParams {
                        seed: args.seed.wrapping_add(trial),
                        ..SamplerParams::default()
                    };
                    let outcome = run_entropy_threshold(
                        &generator,
                        &context,
                        args.max_samples,
                        theta,
                        sampler,
                    )?;
                    total += outcome.samples_used as u64;
                    runs += 1;
                }
            }
            sweep_table.push_str(&format!("{theta}\t{:.6}\n", total as f64 / runs as f64));
        }
        output.push('\n');
        output.push_str(&sweep_table);
    }

    if let Some(out) = &args.out {
        let dir = ensure_out_dir(out)?;
        write_text(&dir.join("simulation.tsv"), &output)?;
    }
    print!("{output}");
    Ok(())
}
