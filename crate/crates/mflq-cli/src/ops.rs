//! Subcommand implementations.
//!
//! Each handler returns the process exit code on success of the *mechanics*
//! (loading, computing, writing): `0` when all checks pass, `1` when a
//! numerical check fails but the run itself completed.  Hard errors
//! propagate as [`mflq::Error`] and are mapped to exit codes by `main`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use mflq::evaluate::{
    calibrate_bias_budget, compare_value, decay_check, stationarity_residual_with,
    suboptimality_probe_with, DecayPoint, ProbeResult, ValueComparison,
};
use mflq::riccati::{self, compute_gains, value_function, AreSolution, IterationTrace};
use mflq::simulate::{simulate_feedback, write_trajectories_csv};
use mflq::{
    Are3Variant, CostEstimate, Error, MfLqModel, RegimeFamily, Result, SimConfig, SolutionDoc,
    SolveOptions,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{family_table, write_atomic, write_atomic_stream, RunManifest};

/// Mean-level update rule selector (command-line face of [`Are3Variant`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantArg {
    /// Fixed point solves the mean-level equation exactly
    Exact,
    /// Literal published update rule; its fixed point solves a perturbed
    /// equation, and the solution document records the discrepancy
    Published,
}

impl From<VariantArg> for Are3Variant {
    fn from(v: VariantArg) -> Are3Variant {
        match v {
            VariantArg::Exact => Are3Variant::Exact,
            VariantArg::Published => Are3Variant::Published,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct ValidateArgs {
    /// Model description file (JSON)
    pub model: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SolveArgs {
    /// Model description file (JSON)
    pub model: PathBuf,
    /// Convergence tolerance on the per-regime equation residuals
    #[arg(long, default_value_t = riccati::DEFAULT_TOL)]
    pub tol: f64,
    /// Maximum number of fixed-point update steps per equation system
    #[arg(long, default_value_t = riccati::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Update rule for the mean-level equation
    #[arg(long, value_enum, default_value_t = VariantArg::Exact)]
    pub variant: VariantArg,
    /// Output path for the solution document
    #[arg(long, default_value = "solution.json")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Model description file (JSON)
    pub model: PathBuf,
    /// Solution document produced by `solve`
    pub solution: PathBuf,
    /// Initial state, comma-separated (default: all ones)
    #[arg(long)]
    pub x0: Option<String>,
    /// Initial regime (1-based)
    #[arg(long, default_value_t = 1)]
    pub i0: usize,
    /// Time horizon
    #[arg(long = "T", default_value_t = 5.0)]
    pub horizon: f64,
    /// Euler time step
    #[arg(long = "h", default_value_t = 1e-3)]
    pub step: f64,
    /// Number of sample paths
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    /// Seed for the per-path deterministic random-number streams
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output CSV path
    #[arg(long, default_value = "trajectories.csv")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    /// Model description file (JSON)
    pub model: PathBuf,
    /// Solution document produced by `solve` (evaluated as given)
    pub solution: PathBuf,
    /// Initial state, comma-separated (default: all ones)
    #[arg(long)]
    pub x0: Option<String>,
    /// Initial regime (1-based)
    #[arg(long, default_value_t = 1)]
    pub i0: usize,
    /// Number of Monte Carlo paths
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Time horizon for the truncated cost integral
    #[arg(long = "T", default_value_t = 5.0)]
    pub horizon: f64,
    /// Euler time step
    #[arg(long = "h", default_value_t = 1e-3)]
    pub step: f64,
    /// Seed for the per-path deterministic random-number streams
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Gain offset used by the suboptimality probe
    #[arg(long, default_value_t = 0.2)]
    pub probe_delta: f64,
    /// Output path for the evaluation report (JSON)
    #[arg(long, default_value = "evaluation.json")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ReproduceArgs {
    /// Directory to write the artifact set into
    #[arg(long, default_value = "reference_run")]
    pub out_dir: PathBuf,
    /// Write into a non-empty directory
    #[arg(long)]
    pub force: bool,
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Parse `--x0`: comma-separated entries, defaulting to all ones.
fn parse_x0(raw: Option<&str>, n: usize) -> Result<DVector<f64>> {
    let Some(text) = raw else {
        return Ok(DVector::repeat(n, 1.0));
    };
    let values = text
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            tok.parse::<f64>()
                .map_err(|e| Error::Config(format!("initial state entry {tok:?}: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != n {
        return Err(Error::Config(format!(
            "initial state has {} entries, model state dimension is {n}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    Ok(DVector::from_vec(values))
}

/// Convert a 1-based command-line regime index to the internal 0-based one.
fn regime_index(i0: usize, regimes: usize) -> Result<usize> {
    if (1..=regimes).contains(&i0) {
        Ok(i0 - 1)
    } else {
        Err(Error::Config(format!(
            "initial regime is 1-based: expected a value in 1..={regimes}, got {i0}"
        )))
    }
}

/// Whole-second checkpoints `1, 2, ..., floor(T)`; just `T` itself when the
/// horizon is shorter than one time unit.
fn integer_checkpoints(horizon: f64) -> Vec<f64> {
    let last = horizon.floor() as usize;
    if last == 0 {
        vec![horizon]
    } else {
        (1..=last).map(|k| k as f64).collect()
    }
}

struct Inputs {
    model: MfLqModel,
    doc: SolutionDoc,
    x0: DVector<f64>,
    /// Internal 0-based initial regime.
    i0: usize,
}

fn load_inputs(
    model_path: &PathBuf,
    solution_path: &PathBuf,
    x0: Option<&str>,
    i0_one_based: usize,
) -> Result<Inputs> {
    let model = MfLqModel::load(model_path)?;
    let doc = SolutionDoc::load(solution_path)?;
    doc.validate_against(&model)?;
    let x0 = parse_x0(x0, model.state_dim())?;
    let i0 = regime_index(i0_one_based, model.regimes())?;
    Ok(Inputs { model, doc, x0, i0 })
}

fn fmt_values(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn fmt_trace(trace: &IterationTrace) -> String {
    trace
        .records
        .iter()
        .map(|rec| {
            let max = rec.residuals.iter().cloned().fold(0.0_f64, f64::max);
            format!("{}:{:.2e}", rec.iteration, max)
        })
        .collect::<Vec<_>>()
        .join("  ")
}

fn print_solution(sol: &AreSolution) {
    println!(
        "state-level equation: converged in {} update steps (residual history  {})",
        sol.trace1.iterations,
        fmt_trace(&sol.trace1)
    );
    print!("{}", family_table("state-level solution P", &sol.p));
    println!("  residuals per regime: {}", fmt_values(&sol.residual1));
    println!();
    println!(
        "mean-level equation ({} update rule): converged in {} update steps (residual history  {})",
        sol.variant, sol.trace3.iterations,
        fmt_trace(&sol.trace3)
    );
    print!("{}", family_table("mean-level solution Ptilde", &sol.p_tilde));
    println!(
        "  exact-equation residuals per regime: {}",
        fmt_values(&sol.residual3)
    );
    if let Some(warning) = &sol.trace3.warning {
        println!("  note: {warning}");
    }
    println!();
    print!(
        "{}",
        family_table("feedback gain Theta (state term)", &sol.gains.theta)
    );
    print!(
        "{}",
        family_table(
            "feedback gain ThetaHat (mean-field correction)",
            &sol.gains.theta_hat
        )
    );
    print!(
        "{}",
        family_table(
            "feedback gain ThetaTilde (total acting on the conditional mean)",
            &sol.gains.theta_tilde
        )
    );
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub fn validate(start: Instant, args: &ValidateArgs) -> Result<i32> {
    let model = MfLqModel::load(&args.model)?;
    let report = model.check_assumptions();

    println!(
        "model: {} regime(s), state dimension {}, control dimension {}, discount rate {}",
        model.regimes(),
        model.state_dim(),
        model.control_dim(),
        model.discount()
    );
    println!();
    println!("assumption margins (smallest eigenvalue of each check matrix)");
    println!("  regime  growth (state)   growth (mean)      min eig Q   min eig Qhat      min eig R");
    for i in 0..model.regimes() {
        println!(
            "  {:>6}  {:>14.6}  {:>14.6}  {:>13.6}  {:>13.6}  {:>13.6}",
            i + 1,
            report.margin1[i],
            report.margin2[i],
            report.q_min_eig[i],
            report.q_hat_min_eig[i],
            report.r_min_eig[i]
        );
    }
    println!();
    println!(
        "growth/discount margins: {} (minimum margin {:.6})",
        pass_str(report.pass_growth),
        report.min_margin()
    );
    if !report.pass_growth {
        for (i, &m) in report.margin1.iter().enumerate() {
            if m <= 0.0 {
                println!(
                    "  state-level growth margin is not positive in regime {} ({:.6})",
                    i + 1,
                    m
                );
            }
        }
        for (i, &m) in report.margin2.iter().enumerate() {
            if m <= 0.0 {
                println!(
                    "  mean-level growth margin is not positive in regime {} ({:.6})",
                    i + 1,
                    m
                );
            }
        }
    }
    println!("weight definiteness: {}", pass_str(report.pass_weights));
    if !report.pass_weights {
        for (i, &v) in report.q_min_eig.iter().enumerate() {
            if v < -1e-12 {
                println!(
                    "  Q({}) is not positive semidefinite (min eigenvalue {:.6})",
                    i + 1,
                    v
                );
            }
        }
        for (i, &v) in report.q_hat_min_eig.iter().enumerate() {
            if v < -1e-12 {
                println!(
                    "  Qhat({}) is not positive semidefinite (min eigenvalue {:.6})",
                    i + 1,
                    v
                );
            }
        }
        for (i, &v) in report.r_min_eig.iter().enumerate() {
            if v <= 0.0 {
                println!(
                    "  R({}) is not positive definite (min eigenvalue {:.6})",
                    i + 1,
                    v
                );
            }
        }
    }
    println!();
    println!("assumptions: {}", pass_str(report.pass()));

    let manifest = RunManifest::new(
        "validate",
        json!({ "model": args.model.display().to_string() }),
    );
    manifest.finish(start, &RunManifest::path_for("validate", None))?;

    Ok(if report.pass() { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

pub fn solve(start: Instant, args: &SolveArgs) -> Result<i32> {
    let model = MfLqModel::load(&args.model)?;
    let report = model.check_assumptions();
    if !report.pass() {
        return Err(Error::Assumptions(format!(
            "model fails the solvability margins (growth {}, weights {}); run `validate {}` for details",
            pass_str(report.pass_growth),
            pass_str(report.pass_weights),
            args.model.display()
        )));
    }

    let options = SolveOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        variant: args.variant.into(),
    };
    let sol = riccati::solve(&model, &options)?;
    print_solution(&sol);

    let doc = SolutionDoc::from_solution(&sol);
    let mut body = doc.to_json_string();
    body.push('\n');
    write_atomic(&args.out, body.as_bytes())?;
    println!();
    println!("wrote {}", args.out.display());

    let mut manifest = RunManifest::new(
        "solve",
        json!({
            "model": args.model.display().to_string(),
            "tol": args.tol,
            "max_iter": args.max_iter,
            "variant": format!("{}", options.variant),
            "out": args.out.display().to_string(),
        }),
    );
    manifest.record_output(&args.out);
    manifest.finish(start, &RunManifest::path_for("solve", Some(&args.out)))?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate(start: Instant, args: &SimulateArgs) -> Result<i32> {
    let inputs = load_inputs(&args.model, &args.solution, args.x0.as_deref(), args.i0)?;
    let config = SimConfig {
        horizon: args.horizon,
        step: args.step,
        paths: args.paths,
        seed: args.seed,
    };
    let set = simulate_feedback(
        &inputs.model,
        &inputs.doc.theta,
        &inputs.doc.theta_hat,
        &inputs.x0,
        inputs.i0,
        &config,
    )?;

    write_atomic_stream(&args.out, |mut w| write_trajectories_csv(&set, &mut w))?;

    let rows: usize = set.paths.iter().map(|p| p.len()).sum();
    let max_norm = set
        .paths
        .iter()
        .map(|p| p.max_state_norm())
        .fold(0.0_f64, f64::max);
    println!(
        "simulated {} path(s): horizon {}, step {}, seed {}",
        args.paths, args.horizon, args.step, args.seed
    );
    println!(
        "initial state [{}], initial regime {}",
        inputs
            .x0
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(", "),
        args.i0
    );
    println!("largest |X| along any path: {max_norm:.6}");
    println!("wrote {} ({} rows)", args.out.display(), rows);

    let mut manifest = RunManifest::new(
        "simulate",
        json!({
            "model": args.model.display().to_string(),
            "solution": args.solution.display().to_string(),
            "x0": inputs.x0.iter().copied().collect::<Vec<f64>>(),
            "i0": args.i0,
            "T": args.horizon,
            "h": args.step,
            "paths": args.paths,
            "seed": args.seed,
            "out": args.out.display().to_string(),
        }),
    );
    manifest.record_output(&args.out);
    manifest.finish(start, &RunManifest::path_for("simulate", Some(&args.out)))?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Number of stored closed-loop trajectories used for the stationarity
/// check (the cost estimate itself streams and stores nothing).
const STATIONARITY_PATHS: usize = 50;

#[derive(Debug, Serialize)]
struct StationaritySummary {
    max_residual_norm: f64,
    mean_residual_norm: f64,
    max_state_norm: f64,
    limit: f64,
    paths: usize,
    pass: bool,
}

/// Full evaluation report: everything the `evaluate` command prints and
/// writes as JSON.
#[derive(Debug, Serialize)]
struct EvaluationReport {
    paths: usize,
    horizon: f64,
    step: f64,
    seed: u64,
    initial_state: Vec<f64>,
    /// 1-based, as given on the command line.
    initial_regime: usize,
    probe_delta: f64,
    /// Headline estimate at the requested step.
    cost: CostEstimate,
    /// Same ensemble at half the step, used for the discretization budget.
    refined_cost: CostEstimate,
    bias_budget: f64,
    analytic_value: f64,
    value_comparison: ValueComparison,
    decay: Vec<DecayPoint>,
    decay_pass: bool,
    stationarity: StationaritySummary,
    probe: ProbeResult,
    pass: bool,
}

struct EvalParams {
    paths: usize,
    horizon: f64,
    step: f64,
    seed: u64,
    probe_delta: f64,
    /// 1-based regime as given on the command line (for the report).
    i0_one_based: usize,
}

fn run_evaluation(
    model: &MfLqModel,
    doc: &SolutionDoc,
    x0: &DVector<f64>,
    i0: usize,
    params: &EvalParams,
) -> Result<EvaluationReport> {
    let config = SimConfig {
        horizon: params.horizon,
        step: params.step,
        paths: params.paths,
        seed: params.seed,
    };

    // Cost estimate at the requested step plus a half-step re-run; the gap
    // between the two sets the discretization bias budget.
    let budget = calibrate_bias_budget(model, &doc.theta, &doc.theta_hat, x0, i0, &config)?;
    let analytic = value_function(&doc.p_tilde, x0, i0)?;
    let comparison = compare_value(&budget.coarse, analytic, budget.budget);

    // Discounted second moment at whole-second checkpoints.
    let checkpoints = integer_checkpoints(config.horizon);
    let decay = decay_check(
        model,
        &doc.theta,
        &doc.theta_hat,
        x0,
        i0,
        &config,
        &checkpoints,
    )?;
    let mut decay_pass = true;
    for l in 0..decay.points.len().saturating_sub(1) {
        let rise = decay.points[l + 1].mean - decay.points[l].mean;
        if rise > 3.0 * decay.paired_difference_se(l, l + 1) {
            decay_pass = false;
        }
    }

    // Stationarity of the optimality identity along stored closed-loop
    // trajectories (a small sub-ensemble; same seed, so paths coincide with
    // the first cost paths).
    let stat_config = SimConfig {
        paths: config.paths.min(STATIONARITY_PATHS),
        ..config
    };
    let set = simulate_feedback(model, &doc.theta, &doc.theta_hat, x0, i0, &stat_config)?;
    let stat = stationarity_residual_with(model, &doc.p, &doc.p_hat, &set)?;
    let limit = 1e-8 * (1.0 + stat.max_state_norm);
    let stationarity = StationaritySummary {
        max_residual_norm: stat.max_norm,
        mean_residual_norm: stat.mean_norm,
        max_state_norm: stat.max_state_norm,
        limit,
        paths: stat_config.paths,
        pass: stat.max_norm <= limit,
    };

    // Cost response to a deliberate gain offset, with common random numbers.
    let probe = suboptimality_probe_with(
        model,
        &doc.theta,
        &doc.theta_hat,
        params.probe_delta,
        x0,
        i0,
        &config,
    )?;

    let pass = comparison.pass && decay_pass && stationarity.pass && probe.pass;
    Ok(EvaluationReport {
        paths: params.paths,
        horizon: params.horizon,
        step: params.step,
        seed: params.seed,
        initial_state: x0.iter().copied().collect(),
        initial_regime: params.i0_one_based,
        probe_delta: params.probe_delta,
        cost: budget.coarse,
        refined_cost: budget.fine,
        bias_budget: budget.budget,
        analytic_value: analytic,
        value_comparison: comparison,
        decay: decay.points,
        decay_pass,
        stationarity,
        probe,
        pass,
    })
}

fn format_evaluation(rep: &EvaluationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "discounted-cost estimate");
    let _ = writeln!(s, "  mean            {:.9}", rep.cost.mean);
    let _ = writeln!(s, "  standard_error  {:.3e}", rep.cost.standard_error);
    let _ = writeln!(s, "  paths           {}", rep.paths);
    let _ = writeln!(s, "  T               {}", rep.horizon);
    let _ = writeln!(s, "  h               {}", rep.step);
    let _ = writeln!(s, "  tail_bound      {:.3e}", rep.cost.tail_bound);
    let _ = writeln!(
        s,
        "  half-step mean  {:.9} (discretization bias budget {:.3e})",
        rep.refined_cost.mean, rep.bias_budget
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "value comparison against 0.5 * x0' Ptilde(i0) x0");
    let _ = writeln!(s, "  analytic_value  {:.9}", rep.analytic_value);
    let _ = writeln!(s, "  deviation       {:+.3e}", rep.value_comparison.deviation);
    let _ = writeln!(
        s,
        "  allowance       {:.3e} (3*SE + tail bound + bias budget)",
        rep.value_comparison.allowance
    );
    let _ = writeln!(s, "  z_score         {:+.3}", rep.value_comparison.z_score);
    let _ = writeln!(s, "  pass            {}", rep.value_comparison.pass);
    let _ = writeln!(s);
    let _ = writeln!(s, "discounted second moment exp(-rt) E|X(t)|^2");
    for p in &rep.decay {
        let _ = writeln!(
            s,
            "  t = {:>4.1}: {:.6e} (se {:.3e})",
            p.time, p.mean, p.standard_error
        );
    }
    let _ = writeln!(
        s,
        "  nonincreasing within 3 paired SE: {}",
        pass_str(rep.decay_pass)
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "stationarity of the optimality identity R u + B'p + D'q");
    let _ = writeln!(
        s,
        "  max residual {:.3e} over {} stored paths (limit {:.3e}, max |X| {:.6}): {}",
        rep.stationarity.max_residual_norm,
        rep.stationarity.paths,
        rep.stationarity.limit,
        rep.stationarity.max_state_norm,
        pass_str(rep.stationarity.pass)
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "suboptimality probe (gain offset {})",
        rep.probe_delta
    );
    let _ = writeln!(
        s,
        "  perturbed-minus-optimal cost gap {:+.6e}, paired se {:.3e}: {}",
        rep.probe.gap,
        rep.probe.paired_se,
        pass_str(rep.probe.pass)
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "overall: {}", pass_str(rep.pass));
    s
}

pub fn evaluate(start: Instant, args: &EvaluateArgs) -> Result<i32> {
    let inputs = load_inputs(&args.model, &args.solution, args.x0.as_deref(), args.i0)?;
    let params = EvalParams {
        paths: args.paths,
        horizon: args.horizon,
        step: args.step,
        seed: args.seed,
        probe_delta: args.probe_delta,
        i0_one_based: args.i0,
    };
    let report = run_evaluation(&inputs.model, &inputs.doc, &inputs.x0, inputs.i0, &params)?;
    print!("{}", format_evaluation(&report));

    let mut body = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Schema(format!("evaluation report serialization: {e}")))?;
    body.push('\n');
    write_atomic(&args.out, body.as_bytes())?;
    println!();
    println!("wrote {}", args.out.display());

    let mut manifest = RunManifest::new(
        "evaluate",
        json!({
            "model": args.model.display().to_string(),
            "solution": args.solution.display().to_string(),
            "x0": report.initial_state,
            "i0": args.i0,
            "paths": args.paths,
            "T": args.horizon,
            "h": args.step,
            "seed": args.seed,
            "probe_delta": args.probe_delta,
            "out": args.out.display().to_string(),
        }),
    );
    manifest.record_output(&args.out);
    manifest.finish(start, &RunManifest::path_for("evaluate", Some(&args.out)))?;
    Ok(if report.pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------

/// Recorded reference values for the built-in instance, one per regime.
/// The solver's output is tabulated against these with per-entry deltas.
const REF_P: [f64; 4] = [0.361, 0.259, 0.171, 0.117];
const REF_P_TILDE: [f64; 4] = [0.687, 0.617, 0.448, 0.307];
const REF_THETA: [f64; 4] = [-0.776, -0.786, -0.714, -0.603];
const REF_THETA_HAT: [f64; 4] = [-1.322, -1.494, -1.498, -1.125];

const REPRODUCE_HORIZON: f64 = 5.0;
const REPRODUCE_STEP: f64 = 1e-3;
const REPRODUCE_SEED: u64 = 42;
const REPRODUCE_SIM_PATHS: usize = 1;
const REPRODUCE_EVAL_PATHS: usize = 10_000;
const REPRODUCE_PROBE_DELTA: f64 = 0.2;

fn scalar_family(values: &[f64; 4]) -> Result<RegimeFamily> {
    RegimeFamily::from_fn(4, |i| DMatrix::from_element(1, 1, values[i]))
}

fn scalar_entries(fam: &RegimeFamily) -> Vec<f64> {
    fam.iter().map(|m| m[(0, 0)]).collect()
}

fn fmt_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.3}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn reference_comparison(sol: &AreSolution, published_theta_hat: &[f64]) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "comparison with the recorded reference values (per entry)"
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "  quantity  regime    computed   reference        delta"
    );
    let rows: [(&str, Vec<f64>, &[f64; 4]); 4] = [
        ("P", scalar_entries(&sol.p), &REF_P),
        ("Ptilde", scalar_entries(&sol.p_tilde), &REF_P_TILDE),
        ("Theta", scalar_entries(&sol.gains.theta), &REF_THETA),
        ("ThetaHat", scalar_entries(&sol.gains.theta_hat), &REF_THETA_HAT),
    ];
    for (name, computed, reference) in &rows {
        for i in 0..4 {
            let delta = computed[i] - reference[i];
            let _ = writeln!(
                s,
                "  {:<8}  {:>6}  {:>10.6}  {:>10.3}  {:>+11.3e}",
                name,
                i + 1,
                computed[i],
                reference[i],
                delta
            );
        }
    }
    let _ = writeln!(s);

    // Recompute the gains from the *reference* P and Ptilde: this shows that
    // the recorded ThetaHat row is not consistent with the recorded P and
    // Ptilde rows under the gain formula, while this solver's output is.
    let model = MfLqModel::reference_example();
    let gains_at_ref = compute_gains(
        &scalar_family(&REF_P)?,
        &scalar_family(&REF_P_TILDE)?,
        &model,
    )?;
    let theta_hat_at_ref = scalar_entries(&gains_at_ref.theta_hat);
    let _ = writeln!(s, "note on the ThetaHat row:");
    let _ = writeln!(
        s,
        "  The gain formula ThetaHat = -(R + D'PD)^(-1) (B'(Ptilde - P) + D'P Chat),"
    );
    let _ = writeln!(
        s,
        "  evaluated at the recorded reference P and Ptilde themselves, gives"
    );
    let _ = writeln!(s, "    [{}]", fmt_row(&theta_hat_at_ref));
    let _ = writeln!(
        s,
        "  which matches this solver's output, not the recorded ThetaHat row"
    );
    let _ = writeln!(s, "    [{}].", fmt_row(&REF_THETA_HAT));
    let _ = writeln!(
        s,
        "  The alternative mean-level update rule (solution_published.json) converges to"
    );
    let _ = writeln!(s, "    [{}]", fmt_row(published_theta_hat));
    let _ = writeln!(
        s,
        "  which does not match the recorded row either.  The recorded ThetaHat row is"
    );
    let _ = writeln!(
        s,
        "  therefore inconsistent with the recorded P and Ptilde rows; its deltas are"
    );
    let _ = writeln!(s, "  reported above without a pass/fail judgement.");
    Ok(s)
}

pub fn reproduce(start: Instant, args: &ReproduceArgs) -> Result<i32> {
    let dir = &args.out_dir;
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)
            .map_err(|source| Error::Io {
                path: dir.display().to_string(),
                source,
            })?
            .next()
            .is_some();
        if occupied && !args.force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;

    let model = MfLqModel::reference_example();
    let report = model.check_assumptions();
    println!(
        "built-in reference instance: {} regimes, scalar state and control, discount rate {}",
        model.regimes(),
        model.discount()
    );
    println!(
        "assumptions: {} (minimum growth margin {:.6})",
        pass_str(report.pass()),
        report.min_margin()
    );
    println!();

    let model_path = dir.join("model.json");
    let mut model_body = model.to_json_string();
    if !model_body.ends_with('\n') {
        model_body.push('\n');
    }
    write_atomic(&model_path, model_body.as_bytes())?;

    // Solve with both mean-level update rules.
    let sol_exact = riccati::solve(
        &model,
        &SolveOptions {
            variant: Are3Variant::Exact,
            ..SolveOptions::default()
        },
    )?;
    print_solution(&sol_exact);
    println!();
    let sol_published = riccati::solve(
        &model,
        &SolveOptions {
            variant: Are3Variant::Published,
            ..SolveOptions::default()
        },
    )?;

    let doc_exact = SolutionDoc::from_solution(&sol_exact);
    let doc_published = SolutionDoc::from_solution(&sol_published);
    let exact_path = dir.join("solution_exact.json");
    let published_path = dir.join("solution_published.json");
    for (path, doc) in [(&exact_path, &doc_exact), (&published_path, &doc_published)] {
        let mut body = doc.to_json_string();
        body.push('\n');
        write_atomic(path, body.as_bytes())?;
    }

    // One sample path under the exact-variant gains.
    let sim_config = SimConfig {
        horizon: REPRODUCE_HORIZON,
        step: REPRODUCE_STEP,
        paths: REPRODUCE_SIM_PATHS,
        seed: REPRODUCE_SEED,
    };
    let x0 = DVector::repeat(model.state_dim(), 1.0);
    let set = simulate_feedback(&model, &doc_exact.theta, &doc_exact.theta_hat, &x0, 0, &sim_config)?;
    let csv_path = dir.join("trajectories.csv");
    write_atomic_stream(&csv_path, |mut w| write_trajectories_csv(&set, &mut w))?;

    // Full Monte Carlo evaluation of the exact-variant solution.
    let params = EvalParams {
        paths: REPRODUCE_EVAL_PATHS,
        horizon: REPRODUCE_HORIZON,
        step: REPRODUCE_STEP,
        seed: REPRODUCE_SEED,
        probe_delta: REPRODUCE_PROBE_DELTA,
        i0_one_based: 1,
    };
    let eval = run_evaluation(&model, &doc_exact, &x0, 0, &params)?;
    let eval_path = dir.join("evaluation.json");
    let mut eval_body = serde_json::to_string_pretty(&eval)
        .map_err(|e| Error::Schema(format!("evaluation report serialization: {e}")))?;
    eval_body.push('\n');
    write_atomic(&eval_path, eval_body.as_bytes())?;

    // Deterministic summary: solver outcome, reference deltas, evaluation.
    let comparison = reference_comparison(&sol_exact, &scalar_entries(&sol_published.gains.theta_hat))?;
    let mut summary = String::new();
    let _ = writeln!(summary, "reference reproduction summary");
    let _ = writeln!(summary, "==============================");
    let _ = writeln!(summary);
    let _ = writeln!(
        summary,
        "model: built-in four-regime scalar instance, discount rate {}",
        model.discount()
    );
    let _ = writeln!(
        summary,
        "solver: exact mean-level update rule, tolerance {:.0e}",
        riccati::DEFAULT_TOL
    );
    let _ = writeln!(
        summary,
        "state-level equation: {} update steps, max residual {:.3e}",
        sol_exact.trace1.iterations,
        sol_exact.residual1.iter().cloned().fold(0.0_f64, f64::max)
    );
    let _ = writeln!(
        summary,
        "mean-level equation: {} update steps, max residual {:.3e}",
        sol_exact.trace3.iterations,
        sol_exact.residual3.iter().cloned().fold(0.0_f64, f64::max)
    );
    let _ = writeln!(summary);
    summary.push_str(&comparison);
    let _ = writeln!(summary);
    let _ = writeln!(
        summary,
        "Monte Carlo evaluation ({} paths, horizon {}, step {}, seed {}, x0 = 1, regime 1)",
        REPRODUCE_EVAL_PATHS, REPRODUCE_HORIZON, REPRODUCE_STEP, REPRODUCE_SEED
    );
    let _ = writeln!(summary);
    summary.push_str(&format_evaluation(&eval));
    let summary_path = dir.join("summary.txt");
    write_atomic(&summary_path, summary.as_bytes())?;

    print!("{comparison}");
    println!();
    print!("{}", format_evaluation(&eval));
    println!();
    for path in [
        &model_path,
        &exact_path,
        &published_path,
        &csv_path,
        &eval_path,
        &summary_path,
    ] {
        println!("wrote {}", path.display());
    }

    let mut manifest = RunManifest::new(
        "reproduce",
        json!({
            "out_dir": dir.display().to_string(),
            "force": args.force,
            "tol": riccati::DEFAULT_TOL,
            "max_iter": riccati::DEFAULT_MAX_ITER,
            "T": REPRODUCE_HORIZON,
            "h": REPRODUCE_STEP,
            "simulate_paths": REPRODUCE_SIM_PATHS,
            "evaluate_paths": REPRODUCE_EVAL_PATHS,
            "seed": REPRODUCE_SEED,
            "probe_delta": REPRODUCE_PROBE_DELTA,
        }),
    );
    for path in [
        &model_path,
        &exact_path,
        &published_path,
        &csv_path,
        &eval_path,
        &summary_path,
    ] {
        manifest.record_output(path);
    }
    manifest.finish(start, &RunManifest::path_for("reproduce", Some(dir)))?;

    Ok(if eval.pass { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x0_defaults_to_all_ones() {
        let x = parse_x0(None, 3).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn x0_parses_comma_separated_entries() {
        let x = parse_x0(Some("0.5, -2, 3e-1"), 3).unwrap();
        assert_eq!(x.as_slice(), &[0.5, -2.0, 0.3]);
    }

    #[test]
    fn x0_dimension_mismatch_is_a_config_error() {
        let err = parse_x0(Some("1,2"), 3).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = parse_x0(Some("oops"), 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = parse_x0(Some("inf"), 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn regime_index_is_one_based() {
        assert_eq!(regime_index(1, 4).unwrap(), 0);
        assert_eq!(regime_index(4, 4).unwrap(), 3);
        assert!(regime_index(0, 4).is_err());
        assert!(regime_index(5, 4).is_err());
    }

    #[test]
    fn checkpoints_cover_whole_seconds() {
        assert_eq!(integer_checkpoints(5.0), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(integer_checkpoints(2.7), vec![1.0, 2.0]);
        assert_eq!(integer_checkpoints(0.5), vec![0.5]);
    }

    #[test]
    fn reference_table_reports_deltas_and_annotation() {
        let model = MfLqModel::reference_example();
        let sol = riccati::solve(&model, &SolveOptions::default()).unwrap();
        let text = reference_comparison(&sol, &[-0.764, -1.243, -1.164, -1.059]).unwrap();
        assert!(text.contains("ThetaHat"));
        assert!(text.contains("0.361"));
        assert!(text.contains("inconsistent with the recorded P and Ptilde rows"));
        // The gain formula at the reference P/Ptilde lands near this solver's
        // ThetaHat, far from the recorded row.
        assert!(text.contains("-0.636"));
    }
}
