//! `mcal`: run, summarize and sweep multi-label active-learning experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mcal_core::harness::{
    self, read_curves_csv, run_experiment, run_sweep, summarize, summary_csv, sweep_csv, sweep_points, write_atomic,
    write_outputs, CurveRecord, DatasetSource, ExperimentConfig, Strategy, SummaryRow, CURVES_FILE, SUMMARY_FILE,
};
use mcal_core::solver::Loss;

#[derive(Parser)]
#[command(
    name = "mcal",
    version,
    about = "Correntropy-based multi-label active learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run datasets x strategies x seeds and write curves, summary, config
    /// snapshot, query logs and split manifests.
    Run(ExperimentArgs),
    /// Win/Tie/Loss table of every strategy against a baseline.
    Summarize(SummarizeArgs),
    /// Tradeoff study over (beta1, beta2) pairs and label-kernel scales.
    Sweep(SweepArgs),
}

/// Flags mirror config keys; a flag overrides the file, which overrides defaults.
#[derive(Args, Clone, Default)]
struct ExperimentArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name from the config, an .arff path (label header next to it
    /// as .xml), csv:<path>:<num_labels>, or synthetic:<emotions|scene>[:seed].
    #[arg(long, value_delimiter = ',')]
    dataset: Vec<String>,
    /// Comma-separated strategies: rmlal, mse_variant, minmargin, random.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    /// Seeds as a list (0,1,2) or an inclusive range (0-4).
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma_scale: Option<f64>,
    /// mcc or mse.
    #[arg(long)]
    loss: Option<String>,
    /// Reference strategy for the summary.
    #[arg(long)]
    baseline: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Curves CSV, or a run directory containing one.
    #[arg(long)]
    curves: PathBuf,
    #[arg(long, default_value = "random")]
    baseline: String,
    /// Restrict to these strategies, in this order.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    /// Write the summary CSV here instead of only printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Values paired over (beta1, beta2).
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
    betas: Vec<f64>,
    /// Label-kernel scales tried at beta1 = beta2 = 1.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    gamma_scales: Vec<f64>,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once('-') {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if b < a {
            bail!("empty seed range {text}");
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect()
}

/// Whether the config file sets `key` at top level.
fn file_sets(path: &Path, key: &str) -> Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    Ok(table.contains_key(key))
}

fn build_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if !args.dataset.is_empty() {
        let mut chosen = Vec::new();
        for d in &args.dataset {
            match config.datasets.iter().find(|s| s.name() == *d) {
                Some(s) => chosen.push(s.clone()),
                None => chosen.push(DatasetSource::parse(d)?),
            }
        }
        config.datasets = chosen;
    }
    if !args.strategy.is_empty() {
        config.strategies = args.strategy.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(s) = &args.seeds {
        config.seeds = parse_seeds(s)?;
    }
    if let Some(b) = args.budget {
        config.budget = b;
    }
    if let Some(c) = args.checkpoint_every {
        config.checkpoint_every = c;
    }
    if let Some(v) = args.beta1 {
        config.solver.beta1 = v;
    }
    if let Some(v) = args.beta2 {
        config.solver.beta2 = v;
    }
    if let Some(v) = args.lambda {
        config.solver.lambda = v;
    }
    if let Some(v) = args.gamma_scale {
        config.kernel.gamma_scale = v;
    }
    if let Some(l) = &args.loss {
        config.solver.loss = match l.as_str() {
            "mcc" => Loss::Mcc,
            "mse" => Loss::Mse,
            other => bail!("unknown loss `{other}` (mcc, mse)"),
        };
    }
    if let Some(b) = &args.baseline {
        config.baseline = b.parse()?;
    }
    if let Some(o) = &args.out {
        config.output_dir = o.clone();
    }
    if config.datasets.is_empty() {
        bail!("no dataset given: pass --dataset or list datasets in --config");
    }
    config.validate()?;
    Ok(config)
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<22} {:<12} {:>4} {:>4} {:>4}  {:>8} {:>8}",
        "dataset", "strategy", "W", "T", "L", "mean F1", "std"
    );
    for r in rows {
        println!(
            "{:<22} {:<12} {:>4} {:>4} {:>4}  {:>8.4} {:>8.4}",
            r.dataset, r.strategy, r.wins, r.ties, r.losses, r.mean_final_f1, r.std_final_f1
        );
    }
}

fn cmd_run(args: &ExperimentArgs) -> Result<bool> {
    let config = build_config(args)?;
    let bundle = run_experiment(&config)?;
    let out = &config.output_dir;
    write_outputs(&bundle, out)?;
    for f in &bundle.failures {
        eprintln!("failed: {} {:?} {:?}: {}", f.dataset, f.strategy, f.seed, f.message);
    }
    let summary = out.join(SUMMARY_FILE);
    if summary.exists() {
        let curves = read_curves_csv(&out.join(CURVES_FILE))?;
        print_summary(&summarize(&curves, config.baseline.name(), &[])?);
    }
    println!("wrote {} runs to {}", bundle.runs.len(), out.display());
    Ok(bundle.failures.is_empty())
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<bool> {
    let path = if args.curves.is_dir() {
        args.curves.join(CURVES_FILE)
    } else {
        args.curves.clone()
    };
    let curves: Vec<CurveRecord> = read_curves_csv(&path)?;
    let rows = summarize(&curves, &args.baseline, &args.strategy)?;
    print_summary(&rows);
    if let Some(out) = &args.out {
        write_atomic(out, &summary_csv(&rows)?)?;
    }
    Ok(true)
}

fn cmd_sweep(args: &SweepArgs) -> Result<bool> {
    let mut config = build_config(&args.experiment)?;
    let strategies_given = !args.experiment.strategy.is_empty()
        || args
            .experiment
            .config
            .as_deref()
            .map_or(Ok(false), |p| file_sets(p, "strategies"))?;
    if !strategies_given {
        config.strategies = vec![Strategy::Rmlal];
    }
    let points = sweep_points(&args.betas, &args.gamma_scales);
    let results = run_sweep(&config, &points)?;
    let out = &config.output_dir;
    write_atomic(&out.join("sweep.csv"), &sweep_csv(&results.rows)?)?;
    write_atomic(&out.join(harness::CONFIG_FILE), &serde_json::to_vec_pretty(&config)?)?;
    println!(
        "{:<22} {:<12} {:>6} {:>6} {:>6}  {:>8} {:>8}",
        "dataset", "strategy", "beta1", "beta2", "gscale", "final F1", "curve F1"
    );
    for r in &results.rows {
        println!(
            "{:<22} {:<12} {:>6} {:>6} {:>6}  {:>8.4} {:>8.4}",
            r.dataset, r.strategy, r.beta1, r.beta2, r.gamma_scale, r.mean_final_f1, r.mean_curve_f1
        );
    }
    for f in &results.failures {
        eprintln!("failed: {} {:?} {:?}: {}", f.dataset, f.strategy, f.seed, f.message);
    }
    Ok(results.failures.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
