//! `capgate` — command-line interface for capability-approval reliability
//! analysis: estimation, misclassification-risk surfaces, scaling collapse,
//! decision-rule comparison, bootstrap instability, margin calibration, and
//! synthetic dataset generation.
//!
//! Every run is reproducible: outcomes depend only on the arguments and
//! `--seed`, never on thread count or wall clock. Exit codes: 0 success,
//! 2 invalid input or parameters, 3 computation failure, 4 I/O failure.

// Validation deliberately uses negated comparisons (`!(x > 0.0)`) so that NaN
// fails closed.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use clap::Parser;

use capgate::{Error, Result};
use commands::{
    BootstrapArgs, CollapseArgs, Ctx, EstimateArgs, FileFormat, MarginArgs, RulesArgs,
    SigmaCArgs, SurfaceArgs, SynthArgs,
};

#[derive(Parser)]
#[command(
    name = "capgate",
    version,
    about = "Stochastic reliability of threshold-based capability approval",
    long_about = "Quantifies how reliable pass/fail capability decisions are near an \
                  approval threshold: capability indices from measurement data, Monte Carlo \
                  misclassification risk, universal scaling collapse, conservative decision \
                  rules, bootstrap flip rates, and risk-adjusted margins.\n\n\
                  All randomness derives from --seed; reruns and different --threads settings \
                  produce byte-identical output files (the manifest records wall-clock times \
                  and is excluded from that guarantee)."
)]
struct Cli {
    /// Base seed; every random quantity in the run derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: the CAPGATE_THREADS variable, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for result files and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out: std::path::PathBuf,
    /// Tabular output format where the command supports both.
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: FileFormat,
    /// Approval threshold the decisions compare against.
    #[arg(long, global = true, default_value_t = 1.33, allow_hyphen_values = true)]
    c0: f64,
    /// Also write a gnuplot script next to the CSV (requires --format csv).
    #[arg(long, global = true)]
    gnuplot_script: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Capability indices, decisions, and screening for a measurement CSV
    Estimate(EstimateArgs),
    /// Misclassification-risk surface over a (true capability, n) grid
    Surface(SurfaceArgs),
    /// Scaling collapse of acceptance curves onto the limit curve
    Collapse(CollapseArgs),
    /// Acceptance curves of the four approval rules
    Rules(RulesArgs),
    /// Bootstrap flip-rate analysis of a measurement CSV
    Bootstrap(BootstrapArgs),
    /// Risk-adjusted margin and adjusted threshold for a sample size
    Margin(MarginArgs),
    /// Generate a synthetic measurement dataset with known true capability
    Synth(SynthArgs),
    /// Asymptotic scale σ_C: closed form and optional Monte Carlo check
    #[command(name = "sigma-c")]
    SigmaC(SigmaCArgs),
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    let requested = match flag {
        Some(k) => Some(k),
        None => match std::env::var("CAPGATE_THREADS") {
            Ok(raw) => Some(raw.trim().parse::<usize>().map_err(|_| {
                Error::InvalidParameter(format!(
                    "CAPGATE_THREADS must be a positive integer, got {raw:?}"
                ))
            })?),
            Err(_) => None,
        },
    };
    if requested == Some(0) {
        return Err(Error::InvalidParameter(
            "thread count must be at least 1".into(),
        ));
    }
    Ok(requested)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = resolve_threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Computation(format!("building the thread pool: {e}")))?;
    }
    if !cli.c0.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "c0 must be finite, got {}",
            cli.c0
        )));
    }
    let ctx = Ctx {
        seed: cli.seed,
        c0: cli.c0,
        out: cli.out,
        format: cli.format,
        gnuplot: cli.gnuplot_script,
        started_at: chrono::Utc::now(),
    };
    match &cli.command {
        Command::Estimate(args) => commands::run_estimate(&ctx, args),
        Command::Surface(args) => commands::run_surface(&ctx, args),
        Command::Collapse(args) => commands::run_collapse(&ctx, args),
        Command::Rules(args) => commands::run_rules(&ctx, args),
        Command::Bootstrap(args) => commands::run_bootstrap(&ctx, args),
        Command::Margin(args) => commands::run_margin(&ctx, args),
        Command::Synth(args) => commands::run_synth(&ctx, args),
        Command::SigmaC(args) => commands::run_sigma_c(&ctx, args),
    }
}

fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::InvalidParameter(_)
        | Error::SampleTooSmall { .. }
        | Error::Schema { .. }
        | Error::TiedSides
        | Error::Calibration(_)
        | Error::ZeroVariance { .. }
        | Error::DegenerateSpread(_) => 2,
        Error::Computation(_) => 3,
        Error::Io { .. } => 4,
        Error::Context { .. } => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(exit_code(&err));
    }
}
