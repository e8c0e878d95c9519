//! Command-line front end.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use moe2_core::Error;
use tracing_subscriber::EnvFilter;

#[derive(Parser, Debug)]
#[command(
    name = "moe2",
    version,
    about = "Mixture of edge experts over simulated LLMs: gating, cost model, subset selection and top-k decoding"
)]
pub struct Cli {
    /// Filter for the JSON log lines on stderr (off, error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic workload and a fleet specialised on its clusters.
    GenWorkload(GenWorkloadArgs),
    /// Train the gating network on a workload over the whole fleet.
    TrainGate(TrainGateArgs),
    /// Expected delay and energy of every nonempty subset.
    CostReport(CostReportArgs),
    /// Choose the expert subset under delay and energy budgets.
    SelectSubset(SelectSubsetArgs),
    /// Decode every prompt with top-k gating over a subset.
    Infer(InferArgs),
    /// Run the full experiment grid.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON configuration; flags take precedence over it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for outputs and the run manifest.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Seed; overrides the configuration and MOE2_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct Instance {
    /// Workload JSON written by gen-workload.
    #[arg(long, value_name = "FILE")]
    pub workload: PathBuf,
    /// Fleet JSON written by gen-workload.
    #[arg(long, value_name = "FILE")]
    pub fleet: PathBuf,
}

/// A `--tau-max` value: `CLASS=SECONDS`, or bare `SECONDS` for every class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauArg {
    All(f64),
    Class(usize, f64),
}

fn parse_tau(s: &str) -> Result<TauArg, String> {
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad seconds value {v:?}"));
    match s.split_once('=') {
        Some((m, v)) => {
            let m = m.trim().parse::<usize>().map_err(|_| format!("bad application class {m:?}"))?;
            Ok(TauArg::Class(m, num(v)?))
        }
        None => Ok(TauArg::All(num(s)?)),
    }
}

#[derive(Args, Debug)]
pub struct Budget {
    /// Deadline per application class as CLASS=SECONDS (repeatable), or SECONDS for all classes.
    #[arg(long = "tau-max", value_name = "M=SECONDS", value_parser = parse_tau)]
    pub tau_max: Vec<TauArg>,
    /// Energy budget in joules.
    #[arg(long, value_name = "JOULES")]
    pub e_max: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenWorkloadArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub prompts: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub app_classes: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainGateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub instance: Instance,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CostReportArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub instance: Instance,
    #[command(flatten)]
    pub budget: Budget,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ObjectiveArg {
    Restricted,
    Tabular,
}

#[derive(Args, Debug)]
pub struct SelectSubsetArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub instance: Instance,
    /// Gate parameters from train-gate; required by the restricted objective.
    #[arg(long, value_name = "FILE")]
    pub theta: Option<PathBuf>,
    #[command(flatten)]
    pub budget: Budget,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub instance: Instance,
    #[arg(long, value_name = "FILE")]
    pub theta: PathBuf,
    /// Subset as a bit string, expert 0 first (e.g. 10110000).
    #[arg(long)]
    pub mask: String,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// JSON configuration with the experiment grid.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// First replicate seed; replicates are renumbered from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeded replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
}

/// 2 for bad input, 3 for an infeasible problem, 1 otherwise.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invalid(_)
        | Error::EmptySubset
        | Error::Dimension { .. }
        | Error::StepOutOfRange { .. }
        | Error::Schema { .. }
        | Error::Json(_) => 2,
        Error::Infeasible(_) => 3,
        _ => 1,
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    let filter = match EnvFilter::try_new(&cli.log_level) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("moe2: invalid --log-level {:?}: {e}", cli.log_level);
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt().json().with_writer(std::io::stderr).with_env_filter(filter).init();

    let argv: Vec<String> = std::env::args().collect();
    match commands::dispatch(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = %e, "run failed");
            eprintln!("moe2: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
