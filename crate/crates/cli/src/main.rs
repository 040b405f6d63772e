//! Command-line front end: analytic tables, Monte-Carlo sweeps, threshold
//! crossover scans, and parameter calculators, all emitting CSV with a
//! config-hash header so outputs stay traceable to the run that made them.

mod commands;
mod config;
mod emit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Failures split by exit code: flag and config problems exit 1,
/// everything that goes wrong after a well-formed request exits 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "probesim", version, about = "Selective-DoS circuit-probing simulator and analytic tables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Closed-form FN, FP, psi, and eta over a (K, Th) grid
    Analytic(Flags),
    /// Monte-Carlo sweep over (d, g); one CSV per metric
    Simulate(Flags),
    /// Per-K bracket where the FN curve crosses the FP curve in Th
    Crossover(Flags),
    /// Pool-size and tuning-range calculators
    Params(Flags),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    None,
    Simple,
    Shrewd,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Match,
    Realistic,
}

/// One flag set shared by all commands; each command reads the subset it
/// understands and rejects values that make no sense for it.
#[derive(Args, Debug, Default)]
pub struct Flags {
    /// fraction of network bandwidth the adversary controls
    #[arg(long)]
    pub t: Option<f64>,

    /// compromised fraction of the guard set; simulate accepts a comma list
    #[arg(long)]
    pub g: Option<String>,

    /// ambient circuit-failure rate
    #[arg(long)]
    pub f: Option<f64>,

    /// adversary drop rate; simulate accepts a comma list
    #[arg(long)]
    pub d: Option<String>,

    /// working-pool size, or "auto" to size it from (t, g)
    #[arg(long = "N")]
    pub n: Option<String>,

    /// candidate exits per probe round; analytic accepts an inclusive
    /// range like "1..9", crossover reads it as the largest K to scan
    #[arg(long = "K")]
    pub k: Option<String>,

    /// probe success threshold; analytic accepts "lo..hi" or "1..K"
    #[arg(long = "Th")]
    pub th: Option<String>,

    /// Monte-Carlo rounds per grid point
    #[arg(long)]
    pub trials: Option<u32>,

    /// master RNG seed; omitted, one is drawn and printed
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,

    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,

    /// rebuild the middle hop fresh for every probe
    #[arg(long)]
    pub randomize_middle: bool,

    /// relay directory CSV for realistic mode (synthesized when absent)
    #[arg(long)]
    pub dir: Option<PathBuf>,

    /// output directory; tables go to stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// TOML config file; flags override file values
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit 2 on bad flags; the contract reserves 2 for
            // runtime failures and 1 for usage
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };

    let result = match &cli.command {
        Command::Analytic(flags) => commands::analytic(flags),
        Command::Simulate(flags) => commands::simulate(flags),
        Command::Crossover(flags) => commands::crossover(flags),
        Command::Params(flags) => commands::params(flags),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
