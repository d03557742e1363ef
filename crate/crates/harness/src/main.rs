use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dualest_harness::{emit_results, run_checks, run_sweep, run_trial, ExperimentConfig, TimingMode};
use dualest_pipeline::{FinalPolicy, TransportKind};

#[derive(Parser)]
#[command(name = "dualest", version, about = "Progressive in-network dual estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one topology and print its metrics.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trial index (selects the data seed).
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Run every chain length in --nodes for --trials seeded trials.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in invariant checks.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML file with ExperimentConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Intermediate node counts: a number, a range like 0-6, or a list like 0,2,4.
    #[arg(long)]
    nodes: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta1: Option<usize>,
    /// Stream length, seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    transport: Option<TransportKind>,
    #[arg(long, value_enum)]
    timing: Option<TimingMode>,
    /// Logical seconds per filter step.
    #[arg(long)]
    step_cost: Option<f64>,
    /// whole-stream or track.
    #[arg(long, value_parser = parse_policy)]
    final_policy: Option<FinalPolicy>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_policy(s: &str) -> Result<FinalPolicy, String> {
    match s {
        "whole-stream" => Ok(FinalPolicy::WholeStream),
        "track" => Ok(FinalPolicy::Track),
        other => Err(format!("unknown final policy `{other}` (expected whole-stream or track)")),
    }
}

fn parse_nodes(spec: &str) -> Result<Vec<usize>> {
    let mut nodes = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once('-') {
            let (lo, hi): (usize, usize) = (lo.trim().parse()?, hi.trim().parse()?);
            if lo > hi {
                bail!("empty node range {part}");
            }
            nodes.extend(lo..=hi);
        } else {
            nodes.push(part.parse().with_context(|| format!("bad node count `{part}`"))?);
        }
    }
    if nodes.is_empty() {
        bail!("no node counts given");
    }
    Ok(nodes)
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(nodes) = &self.nodes {
            config.nodes = parse_nodes(nodes)?;
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { config.$field = v; })* };
        }
        set!(trials, alpha, beta1, duration, seed, transport, timing, step_cost, final_policy);
        config.validate()?;
        Ok(config)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { common, trial } => {
            let config = common.resolve()?;
            let nodes = match config.nodes.as_slice() {
                [l] => *l,
                _ if common.nodes.is_none() => 3,
                _ => bail!("simulate takes a single node count"),
            };
            let row = run_trial(&config, nodes, trial);
            if let Some(out) = &common.out {
                emit_results(std::slice::from_ref(&row), &config.echo()?, out)?;
            }
            println!("{}", serde_json::to_string_pretty(&row)?);
            Ok(if row.is_ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Sweep { common } => {
            let config = common.resolve()?;
            let rows = run_sweep(&config)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("results"));
            let summary = emit_results(&rows, &config.echo()?, &out)?;
            println!("{:>3} {:>5} {:>10} {:>10} {:>10} {:>10}", "L", "runs", "mean T", "median T", "mean e", "ci95 e");
            for l in &summary.lengths {
                println!(
                    "{:>3} {:>5} {:>10.4} {:>10.4} {:>10.5} {:>10.5}",
                    l.nodes, l.runs, l.mean_t, l.median_t, l.mean_e, l.ci95_e
                );
            }
            if let Some(rho) = summary.t_trend {
                println!("spearman(T, L) = {rho:.3}");
            }
            println!("results written to {}", out.display());
            let failures: usize = summary.lengths.iter().map(|l| l.failures).sum();
            Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Verify { common } => {
            let config = common.resolve()?;
            let results = run_checks(&config);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(if results.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
