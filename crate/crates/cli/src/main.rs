use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kwc_cli::{execute, CliResult, Command, RunConfig};
use kwc_core::state::Scheme;

/// Experiments for the 1-D Kobayashi-Warren-Carter control problem.
///
/// Exit codes: 0 success, 2 invalid configuration, 3 solver failure,
/// 4 a checked threshold was exceeded.
#[derive(Parser)]
#[command(name = "kwc", version, about)]
struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Uncontrolled state trajectory: snapshots and energy audit.
    SolveState {
        #[arg(long, value_enum, default_value_t = SchemeArg::SemiImplicit)]
        scheme: SchemeArg,
    },
    /// Identity-coefficient linear system started from one mode.
    LinearSolve,
    /// Adjoint gradient against finite differences.
    GradCheck,
    /// Transpose defect of the discrete adjoint.
    Conjugacy,
    /// Gradient descent from the zero control.
    Optimize,
    /// Warm-started optimization along `optimize.eps_list`.
    Continuation,
    /// Optimality residuals at the optimized control.
    Residuals,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    SemiImplicit,
    Implicit,
    Minmove,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output.directory = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let cmd = match cli.command {
        Cmd::SolveState { scheme } => Command::SolveState(match scheme {
            SchemeArg::SemiImplicit => Scheme::SemiImplicit,
            SchemeArg::Implicit => Scheme::Implicit,
            SchemeArg::Minmove => Scheme::Minmove,
        }),
        Cmd::LinearSolve => Command::LinearSolve,
        Cmd::GradCheck => Command::GradCheck,
        Cmd::Conjugacy => Command::Conjugacy,
        Cmd::Optimize => Command::Optimize,
        Cmd::Continuation => Command::Continuation,
        Cmd::Residuals => Command::Residuals,
    };
    execute(cmd, &cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
