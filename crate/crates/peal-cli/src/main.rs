//! `peal` — experiment driver for parameter-efficient active learning.
//!
//! Commands: `generate` (synthetic dataset files), `run` (one experiment
//! from a key=value config), `sweep` (cartesian product over strategies and
//! seeds), `report` (accuracy table + SVG chart from run directories).
//!
//! Exit codes are a stable contract: 0 success, 1 usage or configuration
//! error, 2 runtime failure.

mod config;
mod report;
mod runex;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use peal_core::dataset::{format, synthetic};
use peal_core::{DataKind, Strategy, SyntheticSpec};

/// Two failure classes, mapped to the two nonzero exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

#[derive(Parser)]
#[command(
    name = "peal",
    version,
    about = "Parameter-efficient active-learning experiments",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset file (PTOK tokens or PEMB embeddings)
    Generate(GenerateArgs),
    /// Run one experiment from a config file into an output directory
    Run(RunArgs),
    /// Run every (strategy, seed) combination of a base config
    Sweep(SweepArgs),
    /// Summarize completed runs: accuracy table plus an SVG chart
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output file path
    #[arg(long)]
    out: PathBuf,
    /// Sample layout: "tokens" (PTOK) or "embeddings" (PEMB)
    #[arg(long, default_value = "tokens")]
    kind: String,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Samples for class 0 (later classes shrink under --imbalance)
    #[arg(long = "per-class", default_value_t = 250)]
    per_class: usize,
    /// Tokens per sample (token datasets only)
    #[arg(long, default_value_t = 4)]
    tokens: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Radius of the sphere the class means are drawn on
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    /// Within-class Gaussian noise scale
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Largest-to-smallest class size ratio (omit for balanced classes)
    #[arg(long)]
    imbalance: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// key=value config file
    #[arg(long)]
    config: PathBuf,
    /// Run directory for CSVs and the manifest
    #[arg(long, default_value = "peal-run")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// key=value base config file
    #[arg(long)]
    config: PathBuf,
    /// Parent directory; each combination gets a subdirectory
    #[arg(long, default_value = "peal-sweep")]
    out: PathBuf,
    /// Strategies to sweep
    #[arg(long, value_delimiter = ',', default_value = "entropy,random,featdist")]
    strategies: Vec<String>,
    /// Experiment seeds to sweep (defaults to the config's seed)
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Completed run directories
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// SVG output path
    #[arg(long, default_value = "report.svg")]
    out: PathBuf,
    /// Accuracy target for the label-efficiency column
    #[arg(long, default_value_t = 0.8)]
    target: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; only real usage errors fail.
            let failed = e.use_stderr();
            let _ = e.print();
            return if failed { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Report(args) => cmd_report(args),
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let kind = match args.kind.as_str() {
        "tokens" => DataKind::Tokens,
        "embeddings" => DataKind::Embeddings,
        other => {
            return Err(CliError::Usage(format!(
                "invalid --kind {other:?} (tokens or embeddings)"
            )))
        }
    };
    let spec = SyntheticSpec {
        kind,
        classes: args.classes,
        per_class: args.per_class,
        tokens: args.tokens,
        dim: args.dim,
        separation: args.separation,
        noise: args.noise,
        imbalance: args.imbalance,
        seed: args.seed,
    };
    let dataset =
        synthetic::generate(&spec).map_err(|e| CliError::Usage(format!("invalid spec: {e}")))?;
    let write = match kind {
        DataKind::Tokens => format::write_ptok(&dataset, &args.out),
        DataKind::Embeddings => format::write_pemb(&dataset, &args.out),
    };
    write.map_err(|e| CliError::Runtime(format!("writing {}: {e}", args.out.display())))?;
    let shape = match kind {
        DataKind::Tokens => format!("{} x {} tokens (PTOK)", args.tokens, args.dim),
        DataKind::Embeddings => format!("{}-dim embeddings (PEMB)", args.dim),
    };
    println!(
        "wrote {} records, {} classes, {shape} to {}",
        dataset.len(),
        dataset.num_classes,
        args.out.display()
    );
    Ok(())
}

fn read_config(path: &PathBuf) -> Result<config::ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("reading {}: {e}", path.display())))?;
    config::parse_config(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let cfg = read_config(&args.config)?;
    let aggregate = runex::execute_run(&cfg, &args.out)?;
    let last = aggregate.lines().last().unwrap_or("");
    println!("run complete: {} ({} trials)", args.out.display(), cfg.loop_cfg.trials);
    println!("final cycle: {last}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let base = read_config(&args.config)?;
    let strategies: Vec<Strategy> = args
        .strategies
        .iter()
        .map(|s| {
            Strategy::from_str(s)
                .map_err(|_| CliError::Usage(format!("invalid strategy {s:?} in --strategies")))
        })
        .collect::<Result<_, _>>()?;
    if strategies.is_empty() {
        return Err(CliError::Usage("--strategies must name at least one strategy".into()));
    }
    let seeds = if args.seeds.is_empty() { vec![base.loop_cfg.seed] } else { args.seeds.clone() };
    for &strategy in &strategies {
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.loop_cfg.strategy = strategy;
            cfg.loop_cfg.seed = seed;
            let name = if seeds.len() > 1 {
                format!("{strategy}-seed{seed}")
            } else {
                strategy.to_string()
            };
            let dir = args.out.join(name);
            runex::execute_run(&cfg, &dir)?;
            println!("swept {strategy} (seed {seed}) -> {}", dir.display());
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let runs: Vec<report::RunSummary> =
        args.runs.iter().map(|d| report::load_run(d)).collect::<Result<_, _>>()?;
    print!("{}", report::render_table(&runs, args.target));
    let svg = report::render_svg(&runs);
    std::fs::write(&args.out, svg)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", args.out.display())))?;
    println!("\nwrote {}", args.out.display());
    Ok(())
}
