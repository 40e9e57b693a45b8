//! Command line front end: run the engine over a CSV, generate synthetic
//! streams, and score detector output against ground truth.

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use skewscan_core::config::Config;
use skewscan_core::eval;
use skewscan_core::pipeline::{run, RunOptions};
use skewscan_core::synth::{generate_to_files, Scenario};

#[derive(Parser)]
#[command(name = "skewscan", version, about = "Streaming regime tracking and anomaly scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process an event log and write per-window scores.
    Run(RunArgs),
    /// Sample a synthetic event stream with ground truth.
    Generate(GenerateArgs),
    /// Compare a score file against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Input CSV of time-stamped events.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV, one row per window.
    #[arg(long)]
    output: PathBuf,
    /// Resume from a snapshot written by an earlier run.
    #[arg(long)]
    snapshot_in: Option<PathBuf>,
    /// Write snapshots here (at the end, plus periodically per the config).
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML scenario describing regimes, segments, and anomalies.
    #[arg(long)]
    scenario: PathBuf,
    /// Master seed for the sampler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV of events.
    #[arg(long)]
    events: PathBuf,
    /// Output CSV of per-window truth.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Score file written by `run`.
    #[arg(long)]
    scores: PathBuf,
    /// Truth file: generator truth or per-window label tallies.
    #[arg(long)]
    truth: PathBuf,
    /// Minimum attack fraction for a window to count as positive (tally
    /// truth only); any attack event qualifies at the default of 0.
    #[arg(long, default_value_t = 0.0)]
    min_attack_fraction: f64,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = Config::from_path(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.model.seed = seed;
    }
    let report = run(&RunOptions {
        config,
        input: args.input,
        output: args.output.clone(),
        snapshot_in: args.snapshot_in,
        snapshot_out: args.snapshot_out,
    })?;
    println!("windows,{}", report.windows_this_run);
    println!("windows_total,{}", report.windows_total);
    println!("events,{}", report.events_this_run);
    println!("rows_rejected,{}", report.parse.rejected);
    println!("events_out_of_order,{}", report.parse.out_of_order);
    println!("values_clamped,{}", report.parse.clamped_values);
    println!("regimes,{}", report.regimes);
    println!("switches,{}", report.switches);
    println!("elapsed_seconds,{}", report.elapsed_seconds);
    println!("scores,{}", args.output.display());
    if let Some(labels) = &report.labels_path {
        println!("labels,{}", labels.display());
    }
    println!("meta,{}", report.meta_path.display());
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let scenario = Scenario::from_path(&args.scenario)
        .with_context(|| format!("loading scenario {}", args.scenario.display()))?;
    let summary = generate_to_files(&scenario, args.seed, &args.events, &args.truth)?;
    println!("windows,{}", summary.windows);
    println!("events,{}", summary.events);
    println!("anomalous_windows,{}", summary.anomalous_windows);
    println!("regimes,{}", summary.regime_names.len());
    println!("events_file,{}", args.events.display());
    println!("truth_file,{}", args.truth.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let scores = eval::read_scores(&args.scores)
        .with_context(|| format!("reading scores {}", args.scores.display()))?;
    if scores.is_empty() {
        bail!("score file {} has no rows", args.scores.display());
    }
    let truth = eval::read_truth_file(&args.truth)
        .with_context(|| format!("reading truth {}", args.truth.display()))?;

    let (labels_by_window, truth_regimes, rule) = match truth {
        eval::TruthFile::Synthetic(rows) => {
            let labels: HashMap<u64, bool> =
                rows.iter().map(|r| (r.window_index, r.is_anomaly)).collect();
            let regimes: HashMap<u64, u32> =
                rows.iter().map(|r| (r.window_index, r.regime_id)).collect();
            (labels, Some(regimes), "generator-flag".to_string())
        }
        eval::TruthFile::Tallies(rows) => {
            let attack: Vec<u64> = rows.iter().map(|r| r.attack_events).collect();
            let totals: Vec<u64> = rows.iter().map(|r| r.events).collect();
            let flags = eval::label_windows(&attack, &totals, args.min_attack_fraction)?;
            let labels = rows.iter().zip(&flags).map(|(r, &f)| (r.window_index, f)).collect();
            let rule = if args.min_attack_fraction == 0.0 {
                "any-attack".to_string()
            } else {
                format!("attack-fraction>={}", args.min_attack_fraction)
            };
            (labels, None, rule)
        }
    };

    let mut score_values = Vec::with_capacity(scores.len());
    let mut labels = Vec::with_capacity(scores.len());
    for row in &scores {
        let Some(&label) = labels_by_window.get(&row.window_index) else {
            bail!("truth file has no row for window {}", row.window_index);
        };
        score_values.push(row.anomaly_score);
        labels.push(label);
    }
    let positives = labels.iter().filter(|&&l| l).count();

    println!("windows,{}", scores.len());
    println!("positives,{positives}");
    println!("labeling,{rule}");
    let roc = eval::roc_auc(&score_values, &labels)?;
    println!("roc_auc,{roc}");
    let pr = eval::pr_auc(&score_values, &labels)?;
    println!("pr_auc,{pr}");

    if let Some(regimes) = truth_regimes {
        let mut predicted = Vec::with_capacity(scores.len());
        let mut actual = Vec::with_capacity(scores.len());
        for row in &scores {
            let Some(&truth_id) = regimes.get(&row.window_index) else {
                bail!("truth file has no regime for window {}", row.window_index);
            };
            predicted.push(row.chosen_regime_id.unwrap_or(eval::NO_REGIME));
            actual.push(truth_id);
        }
        let acc = eval::segmentation_accuracy(&predicted, &actual)?;
        println!("segmentation_accuracy,{acc}");
    }
    Ok(())
}
