//! `causal-bell` command-line front end.
//!
//! Exit codes: 0 success (for `test`, LHV rejected), 1 LHV retained,
//! 2 usage or input error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "causal-bell",
    version,
    about = "Bell-test simulation and local-model analysis"
)]
pub struct Cli {
    /// Output format for the result document.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match-probability table and violation margin for three axes.
    Correlations(AnglesArg),
    /// Largest Bell statistic over deterministic local tables.
    LhvMax {
        #[arg(long, value_enum, default_value_t = FilterArg::All)]
        filter: FilterArg,
    },
    /// Contradiction traces showing no local table has the interaction pattern.
    TraceProof {
        #[arg(long, value_enum)]
        branch: Option<BranchArg>,
    },
    /// Generate a seeded dataset.
    Simulate(SimulateArgs),
    /// Estimate the Bell statistic from a dataset and test the local bound.
    Test(TestArgs),
    /// Grid supremum of the Bell statistic over stochastic local models.
    StochasticSup {
        #[arg(long, default_value_t = 11)]
        grid_steps: usize,
    },
    /// Detection-loophole LP at the quantum targets.
    Loophole(LoopholeArgs),
}

#[derive(Debug, Args)]
pub struct AnglesArg {
    /// Three measurement axes in degrees, e.g. 60,0,120.
    #[arg(long, value_parser = parse_angles, allow_hyphen_values = true)]
    pub angles: [f64; 3],
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterArg {
    All,
    AntiCorrelatedDiagonal,
    EqualSpins,
    AllSpinsEqual,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BranchArg {
    A,
    B,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Quantum,
    DeterministicLhv,
    StochasticLhv,
    Loophole,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SettingsArg {
    #[value(name = "uniform-9")]
    Uniform9,
    #[value(name = "uniform-4")]
    Uniform4,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConditioningArg {
    AllPairs,
    CoincidencesOnly,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub source: SourceArg,
    #[arg(long, value_parser = parse_angles, allow_hyphen_values = true, default_value = "60,0,120")]
    pub angles: [f64; 3],
    /// Number of trials.
    #[arg(long)]
    pub n: u64,
    /// Seed; generated and reported when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Local model JSON for the lhv sources.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Coincidence floor for the loophole source's LP.
    #[arg(long, default_value_t = 0.0)]
    pub floor: f64,
    #[arg(long, value_enum, default_value_t = SettingsArg::Uniform9)]
    pub settings: SettingsArg,
    /// Write the CSV dataset here (plus a `.meta.json` sidecar) instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for generation; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// One-sided significance level.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = ConditioningArg::CoincidencesOnly)]
    pub conditioning: ConditioningArg,
    /// Two-sided interval level reported alongside the test.
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    /// Dataset CSV; read from stdin when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LoopholeArgs {
    #[arg(long, value_parser = parse_angles, allow_hyphen_values = true, default_value = "60,0,120")]
    pub angles: [f64; 3],
    /// Required coincidence rate for every setting pair.
    #[arg(long, conflicts_with = "max_efficiency")]
    pub floor: Option<f64>,
    /// Report the largest fakeable coincidence floor instead.
    #[arg(long)]
    pub max_efficiency: bool,
}

fn parse_angles(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!(
            "expected three comma-separated angles, got {}",
            parts.len()
        ));
    }
    let mut out = [0.0; 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        let v: f64 = p.parse().map_err(|_| format!("'{p}' is not a number"))?;
        if !v.is_finite() {
            return Err(format!("'{p}' is not finite"));
        }
        *slot = v;
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
