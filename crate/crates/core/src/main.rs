use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hsac::agents::{gradient_suite, Variant, OBJECTIVES};
use hsac::env::{optimal_return_oracle, EnvConfig};
use hsac::harness::{prepare_output_dir, run_experiment, write_outputs, ExperimentConfig};

#[derive(Parser)]
#[command(name = "hsac", version, about = "Hierarchical soft actor-critic experiments on a sparse-reward chain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write metrics.csv, summary.csv and failures.csv.
    Run(RunArgs),
    /// Print the optimal expected episode reward for each chain length.
    Oracle {
        /// Chain lengths; defaults to the sweep grid.
        #[arg(long, value_delimiter = ',', default_values_t = [6usize, 8, 12, 18])]
        ng: Vec<usize>,
    },
    /// Check every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Flags override the config file, which overrides the defaults.
#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated variant names.
    #[arg(long, value_delimiter = ',')]
    variant: Option<Vec<Variant>>,
    /// Comma-separated chain lengths.
    #[arg(long, value_delimiter = ',')]
    ng: Option<Vec<usize>>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    /// Write one step-level trace file per run under `traces/`.
    #[arg(long)]
    dump_traces: bool,
    /// Fill the `ms` column with wall-clock time per episode.
    #[arg(long)]
    wall_clock: bool,
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.variant {
        cfg.variants = v;
    }
    if let Some(ng) = args.ng {
        cfg.ng_values = ng;
    }
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    if let Some(o) = args.out {
        cfg.out = Some(o);
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(b) = args.base_seed {
        cfg.base_seed = b;
    }
    cfg.dump_traces |= args.dump_traces;
    cfg.wall_clock |= args.wall_clock;
    cfg.validate()?;
    let out = cfg.out.clone().context("an output directory is required (--out or `out =` in the config)")?;
    // Fail before hours of compute, not after.
    prepare_output_dir(&out).with_context(|| format!("output directory {}", out.display()))?;

    let runs = cfg.variants.len() * cfg.ng_values.len() * cfg.seeds;
    eprintln!("running {runs} runs of {} episodes on {} worker(s)", cfg.episodes, cfg.workers);
    let started = Instant::now();
    let result = run_experiment(&cfg)?;
    write_outputs(&out, &cfg, &result)?;
    eprintln!("finished in {:.1?}, {} failed run(s)", started.elapsed(), result.failures().len());
    println!("variant,ng,mean_final,stderr,oracle_ratio,failed_runs");
    for s in &result.summary {
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
        println!("{},{},{},{},{},{}", s.variant, s.ng, fmt(s.mean_final), fmt(s.stderr), fmt(s.oracle_ratio), s.failed_runs);
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Oracle { ng } => {
            println!("ng,optimal_return");
            for n in ng {
                println!("{n},{}", optimal_return_oracle(&EnvConfig::new(n)?, None));
            }
            Ok(())
        }
        Command::Gradcheck { instances, seed, eps, tolerance } => {
            let started = Instant::now();
            let report = gradient_suite(instances, seed, eps)?;
            for (name, err) in OBJECTIVES.iter().zip(&report.worst) {
                println!("{name:<40} {err:.3e}");
            }
            println!("{} instances in {:.1?}, worst {:.3e}", report.instances, started.elapsed(), report.max_error());
            if report.max_error() > tolerance {
                bail!("relative error {:.3e} exceeds {tolerance:e}", report.max_error());
            }
            Ok(())
        }
    }
}
