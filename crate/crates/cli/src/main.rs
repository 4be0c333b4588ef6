use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dhen_cli::{cmd_compare, cmd_plan, cmd_simulate, cmd_train, ExperimentConfig, DEFAULT_SWEEP};
use dhen_core::sim::ParadigmKind;

/// Hierarchical-ensemble CTR model: training runs, embedding sharding plans,
/// and analytical training-system simulation, all driven by one config file.
#[derive(Parser)]
#[command(name = "dhen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParadigmArg {
    Dp,
    Fsdp,
    Hsdp,
}

impl From<ParadigmArg> for ParadigmKind {
    fn from(p: ParadigmArg) -> Self {
        match p {
            ParadigmArg::Dp => ParadigmKind::Dp,
            ParadigmArg::Fsdp => ParadigmKind::Fsdp,
            ParadigmArg::Hsdp => ParadigmKind::Hsdp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic data and write metrics, a summary, and the model.
    Train {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// metrics.csv of a previous run to report an NE difference against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Slice and place the embedding tables; write the plan and its balance.
    Plan {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate one training iteration under a paradigm.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the paradigm in the config.
        #[arg(long)]
        paradigm: Option<ParadigmArg>,
    },
    /// Sweep layer counts and tabulate throughput per paradigm.
    Compare {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated layer counts.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
    },
}

fn run() -> Result<(), dhen_cli::CliError> {
    match Cli::parse().command {
        Command::Train { config, out, baseline } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let outcome = cmd_train(&cfg, &out, baseline.as_deref())?;
            println!("final_eval_ne: {}", outcome.final_eval_ne);
            if let Some(diff) = outcome.ne_diff_pct {
                println!("ne_diff_pct: {diff}");
            }
            println!("wrote {}", out.display());
        }
        Command::Plan { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let outcome = cmd_plan(&cfg, &out)?;
            println!("shards: {}", outcome.placement.assignments.len());
            println!("makespan: {}", outcome.placement.makespan);
            if let Some(opt) = outcome.optimal_makespan {
                if opt > 0.0 {
                    println!("lpt_ratio: {}", outcome.placement.makespan / opt);
                }
            }
            println!("wrote {}", out.display());
        }
        Command::Simulate { config, out, paradigm } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = cmd_simulate(&cfg, &out, paradigm.map(Into::into))?;
            if report.feasible {
                println!("paradigm: {}", report.paradigm.name());
                println!("iteration_seconds: {}", report.iteration_time);
                println!("throughput_qps: {}", report.throughput_qps);
            } else {
                println!("paradigm: {}", report.paradigm.name());
                println!("verdict: infeasible");
            }
            println!("wrote {}", out.display());
        }
        Command::Compare { config, out, layers } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let sweep = layers.unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
            let rows = cmd_compare(&cfg, &out, &sweep)?;
            println!("cells: {}", rows.len());
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
