//! `swcert`: certify, sweep, attack, simulate and inspect switched systems.
//!
//! Exit codes: 0 success (for `certify`, certified stable), 2 inconclusive,
//! 1 any error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Fixed default so that unseeded runs are reproducible.
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Parser, Debug)]
#[command(name = "swcert", version, about = "Stability certificates for switched linear systems under mode-frequency bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the lifted LP at one `h` and report the sign test.
    Certify(CertifyArgs),
    /// Optimal values over an `h` range and a parameter grid, as CSV.
    Sweep(SweepArgs),
    /// Read a periodic schedule off the optimal occupancy and check it.
    Attack(AttackArgs),
    /// Simulate trajectories under the configured signal.
    Simulate(SimulateArgs),
    /// Exact limit frequencies of `h`-blocks of a hidden-Markov signal.
    Oracle(OracleArgs),
    /// Variable counts of the sequence and count-vector LPs.
    Bench(BenchArgs),
    /// Dump one LP, its solution and the certificate check.
    LpDebug(LpDebugArgs),
}

#[derive(Args, Debug, Clone)]
pub struct AnalysisFlags {
    /// Scenario file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Lifting horizon; overrides the config.
    #[arg(long)]
    pub h: Option<usize>,
    /// Norm name: one, inf, spectral or frobenius.
    #[arg(long)]
    pub norm: Option<String>,
    /// Lower clamp on product norms before taking logarithms.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Which LP to solve: 1 (one variable per sequence) or 2 (per count vector).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub lp: Option<u8>,
    /// Worker threads for table construction and sweep cells.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub analysis: AnalysisFlags,
    /// Write the machine-readable certificate (JSON) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the JSON certificate instead of the text report.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub analysis: AnalysisFlags,
    /// Smallest `h` of the range (default 1, or `--h` when given).
    #[arg(long)]
    pub h_min: Option<usize>,
    /// Largest `h` of the range.
    #[arg(long)]
    pub h_max: Option<usize>,
    /// Grid axis `name=v1,v2,...`; repeatable, replaces the config's axes.
    #[arg(long = "param")]
    pub params: Vec<String>,
    /// CSV destination (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write 0 in the wall-time column so output is byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[command(flatten)]
    pub analysis: AnalysisFlags,
    /// Evaluate this comma-separated periodic pattern instead of extracting one.
    #[arg(long)]
    pub pattern: Option<String>,
    /// Largest common denominator when rounding the occupancy.
    #[arg(long, default_value_t = 10_000)]
    pub max_denominator: u32,
    /// Periods to simulate for the growth check.
    #[arg(long, default_value_t = 10)]
    pub periods: usize,
    /// Write the plan (JSON) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Steps per run; overrides the config.
    #[arg(long)]
    pub steps: Option<usize>,
    /// First seed; run `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of runs.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Emit the per-step norm log of every run instead of one summary row per run.
    #[arg(long)]
    pub trace: bool,
    /// CSV destination (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Block length.
    #[arg(long)]
    pub h: Option<usize>,
    /// Also sample this many steps and report empirical block frequencies.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 15)]
    pub h_max: usize,
    #[arg(long, default_value_t = 5)]
    pub m_max: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LpDebugArgs {
    #[command(flatten)]
    pub analysis: AnalysisFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Certify(a) => commands::certify(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Attack(a) => commands::attack(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Bench(a) => commands::bench(a),
        Command::LpDebug(a) => commands::lp_debug(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
