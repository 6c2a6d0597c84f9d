//! `mflq` — solver, simulator, and Monte Carlo evaluator for
//! infinite-horizon discounted linear-quadratic control of mean-field
//! diffusions with Markov regime switching.
//!
//! Exit codes: `0` on success with all checks passing, `1` on a numerical
//! failure (assumption violation, non-convergence, failed evaluation
//! check), `2` on bad input (unreadable or malformed files, invalid
//! flags).

mod artifacts;
mod ops;

use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "mflq",
    version,
    about = "Discounted LQ control of mean-field regime-switching diffusions",
    long_about = "Solver, simulator, and Monte Carlo evaluator for infinite-horizon \
                  discounted linear-quadratic control of mean-field diffusions whose \
                  coefficients switch with a finite-state Markov chain."
)]
struct Cli {
    /// Worker threads for path-parallel work (0 = one per CPU core).
    /// Thread count never changes numerical results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file: schema, shapes, and the solvability margins
    Validate(ops::ValidateArgs),
    /// Solve the coupled state-level and mean-level Riccati systems
    Solve(ops::SolveArgs),
    /// Integrate closed-loop sample paths under a solution's feedback gains
    Simulate(ops::SimulateArgs),
    /// Monte Carlo checks of a solution: cost vs analytic value, decay,
    /// stationarity, suboptimality probe
    Evaluate(ops::EvaluateArgs),
    /// Run the built-in reference instance end to end and tabulate deltas
    /// against its recorded reference values
    Reproduce(ops::ReproduceArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Ignore failure: the global pool can only be configured once, and a
        // default pool works fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }

    let start = Instant::now();
    let result = match &cli.command {
        Command::Validate(args) => ops::validate(start, args),
        Command::Solve(args) => ops::solve(start, args),
        Command::Simulate(args) => ops::simulate(start, args),
        Command::Evaluate(args) => ops::evaluate(start, args),
        Command::Reproduce(args) => ops::reproduce(start, args),
    };

    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_input_error() { 2 } else { 1 })
        }
    }
}
