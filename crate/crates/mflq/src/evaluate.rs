//! Monte Carlo evaluation of the discounted cost and consistency checks that
//! tie simulation back to the solved value function.
//!
//! The cost of a linear feedback `u = K(α)X + K̂(α)X̂` is estimated by
//! streaming the closed-loop Euler scheme (same per-step arithmetic as the
//! trajectory recorder in [`crate::simulate`]) and accumulating the
//! left-endpoint quadrature of `½e^{−rt}(XᵀQX + X̂ᵀQ̂X̂ + uᵀRu)` per path,
//! so arbitrarily many paths run in constant memory. Aggregation uses
//! pairwise summation over the path-ordered results, which makes every
//! reported number independent of thread scheduling.
//!
//! Truncating the integral at `T` is covered by an analytic tail bound: the
//! pair `Z = (X, X̂)` satisfies a linear SDE with per-regime drift `G` and
//! diffusion row `H = [C+DK, Ĉ+DK̂]`, so if
//! `m = min_i λ_min(rI − G_i − G_iᵀ − H_iᵀH_i) > 0` then
//! `e^{−rt}E|Z(t)|² ≤ |z0|² e^{−mt}`, and the running cost rate is at most
//! `c·|Z|²`; the tail beyond `T` is then at most `c·2|x0|²·e^{−mT}/m`.
//!
//! Comparative experiments (step halving, gain perturbations) share seeds
//! across arms, so every path pair differs only in the quantity under study
//! and the comparison error is the standard error of the paired differences.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{self, RegimeFamily};
use crate::model::MfLqModel;
use crate::riccati::AreSolution;
use crate::simulate::{
    check_feedback_shapes, path_rng, refined_grid, sample_markov_path, within_limits,
    LoopCoefficients, PathTrajectory, SimConfig, StepBuffers, TrajectorySet, BLOW_UP_LIMIT,
};

/// Monte Carlo estimate of the discounted cost of a feedback law.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostEstimate {
    /// Sample mean of the per-path discounted costs on `[0, T]`.
    pub mean: f64,
    /// Sample standard deviation of per-path costs divided by `√paths`.
    pub standard_error: f64,
    pub paths: usize,
    pub horizon: f64,
    pub step: f64,
    /// Analytic bound on the cost mass beyond `horizon` (`+∞` when the
    /// closed-loop decay margin is not positive).
    pub tail_bound: f64,
}

/// Outcome of comparing a cost estimate against an analytic value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValueComparison {
    /// `(mean − analytic) / standard_error`; `0` on exact agreement even
    /// when the standard error vanishes.
    pub z_score: f64,
    /// `mean − analytic`.
    pub deviation: f64,
    /// `3·standard_error + tail_bound + bias_budget`.
    pub allowance: f64,
    pub pass: bool,
}

/// Step-halving calibration of the `O(h)` discretization bias.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BiasBudget {
    pub coarse: CostEstimate,
    pub fine: CostEstimate,
    /// `√(SE_coarse² + SE_fine²)` — the two arms share chain realizations
    /// but not Brownian increments, so their difference carries noise.
    pub combined_se: f64,
    /// `2·|mean_coarse − mean_fine| + 3·combined_se`: a Richardson-style
    /// bound on the coarse run's bias, padded against Monte Carlo noise.
    pub budget: f64,
}

/// One checkpoint of the discounted second-moment decay curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayPoint {
    pub time: f64,
    /// Estimate of `e^{−rt}E|X(t)|²`.
    pub mean: f64,
    pub standard_error: f64,
}

/// Decay estimates at several checkpoints from one shared path ensemble.
#[derive(Debug, Clone)]
pub struct DecaySeries {
    /// Summary per checkpoint, in the caller's checkpoint order.
    pub points: Vec<DecayPoint>,
    /// `per_path[l][p]`: path `p`'s value at checkpoint `l` (same order as
    /// `points`), kept so checkpoints can be compared pairwise.
    pub per_path: Vec<Vec<f64>>,
}

impl DecaySeries {
    /// Standard error of the paired per-path differences between
    /// checkpoints `l1` and `l2` (the right scale for comparing two points
    /// of the same ensemble).
    pub fn paired_difference_se(&self, l1: usize, l2: usize) -> f64 {
        let diffs: Vec<f64> = self.per_path[l1]
            .iter()
            .zip(&self.per_path[l2])
            .map(|(a, b)| a - b)
            .collect();
        mean_and_se(&diffs).1
    }
}

/// Pointwise defect of the first-order optimality condition along simulated
/// trajectories.
///
/// At each grid point the adjoint pair is reconstructed from the Riccati
/// solution, `p = P(α)X + P̂(α)X̂` and `q = P(α)[C(α)X + Ĉ(α)X̂ + D(α)u]`,
/// and the report stores `|R(α)u + Bᵀ(α)p + Dᵀ(α)q|` per path and grid
/// point. On trajectories driven by the solution's own gains this is an
/// algebraic identity equal to zero, so only round-off remains.
#[derive(Debug, Clone)]
pub struct StationarityReport {
    /// `norms[p][j]`: residual norm of path `p` at grid point `j`.
    pub norms: Vec<Vec<f64>>,
    pub max_norm: f64,
    pub mean_norm: f64,
    /// Largest `|X|` seen, for scaling round-off expectations.
    pub max_state_norm: f64,
}

/// Paired comparison of the optimal cost against a perturbed-gain cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub j_optimal: CostEstimate,
    pub j_perturbed: CostEstimate,
    /// `j_perturbed.mean − j_optimal.mean`.
    pub gap: f64,
    /// Standard error of the per-path cost differences (both arms share
    /// chains and Brownian increments).
    pub paired_se: f64,
    /// Whether the perturbed cost is no better than optimal within noise:
    /// `gap ≥ −3·paired_se`.
    pub pass: bool,
}

/// Sum with pairwise splitting: deterministic for a fixed order and accurate
/// to `O(log n)` rounding errors.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Sample mean and standard error (`sd/√n`; zero when `n < 2`).
pub(crate) fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = v.iter().map(|c| (c - mean) * (c - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct PathOutcome {
    cost: f64,
    /// `e^{−rt}|X(t)|²` at the requested (sorted) checkpoint times.
    checkpoints: Vec<f64>,
}

/// Stream one path: integrate the closed loop and accumulate the discounted
/// cost quadrature, recording checkpoint values, without storing the
/// trajectory.
#[allow(clippy::too_many_arguments)]
fn stream_path(
    model: &MfLqModel,
    coeffs: &LoopCoefficients,
    kx: &RegimeFamily,
    khat: &RegimeFamily,
    x0: &DVector<f64>,
    i0: usize,
    config: &SimConfig,
    sorted_checkpoints: &[f64],
    path_id: usize,
) -> Result<PathOutcome> {
    let (n, k) = (model.state_dim(), model.control_dim());
    let mut rng = path_rng(config.seed, path_id as u64);
    let chain = sample_markov_path(model.generator(), i0, config.horizon, &mut rng)?;
    let grid = refined_grid(config.horizon, config.step, &chain.jump_times);
    let gap = 1e-12 * (1.0 + config.horizon);
    let discount = model.discount();

    let mut x = x0.clone();
    let mut xhat = x0.clone();
    let mut buf = StepBuffers::new(n, k);
    let mut qbuf = DVector::zeros(n);
    let mut rbuf = DVector::zeros(k);
    let mut cost = 0.0;
    let mut checkpoints = Vec::with_capacity(sorted_checkpoints.len());
    let mut next_ck = 0usize;

    let points = grid.len();
    for j in 0..points {
        let t = grid[j];
        let regime = chain.regime_at(t);
        buf.eval_control(kx, khat, regime, &x, &xhat);
        while next_ck < sorted_checkpoints.len() && t >= sorted_checkpoints[next_ck] - gap {
            checkpoints.push((-discount * t).exp() * x.norm_squared());
            next_ck += 1;
        }
        if j + 1 == points {
            break;
        }
        let dt = grid[j + 1] - t;
        let disc = (-discount * t).exp();
        qbuf.gemv(1.0, &model.q[regime], &x, 0.0);
        let mut rate = x.dot(&qbuf);
        qbuf.gemv(1.0, &model.q_hat[regime], &xhat, 0.0);
        rate += xhat.dot(&qbuf);
        rbuf.gemv(1.0, &model.r_ctrl[regime], &buf.u, 0.0);
        rate += buf.u.dot(&rbuf);
        cost += 0.5 * disc * rate * dt;

        let z: f64 = StandardNormal.sample(&mut rng);
        let dw = z * dt.sqrt();
        buf.advance(coeffs, regime, dt, dw, &mut x, &mut xhat);
        if !within_limits(&x, &xhat) {
            return Err(Error::BlowUp {
                path_id,
                time: grid[j + 1],
                limit: BLOW_UP_LIMIT,
            });
        }
    }
    Ok(PathOutcome { cost, checkpoints })
}

/// Run the whole ensemble, collecting outcomes in path order.
fn per_path_outcomes(
    model: &MfLqModel,
    kx: &RegimeFamily,
    khat: &RegimeFamily,
    x0: &DVector<f64>,
    i0: usize,
    config: &SimConfig,
    sorted_checkpoints: &[f64],
) -> Result<Vec<PathOutcome>> {
    config.validate()?;
    check_feedback_shapes(model, kx, khat, x0, i0)?;
    let coeffs = LoopCoefficients::build(model, kx, khat);
    (0..config.paths)
        .into_par_iter()
        .map(|p| stream_path(model, &coeffs, kx, khat, x0, i0, config, sorted_checkpoints, p))
        .collect()
}

pub(crate) fn per_path_costs(
    model: &MfLqModel,
    kx: &RegimeFamily,
    khat: &RegimeFamily,
    x0: &DVector<f64>,
    i0: usize,
    config: &SimConfig,
) -> Result<Vec<f64>> {
    Ok(per_path_outcomes(model, kx, khat, x0, i0, config, &[])?
        .into_iter()
        .map(|o| o.cost)
        .collect())
}

/// Analytic bound on the discounted cost mass beyond `horizon` under the
/// feedback `(K, K̂)` started at `x0` (any initial regime).
///
/// Uses the pair bound from the module docs; `+∞` when the joint decay
/// margin is not positive, which honestly reports that truncation is then
/// uncontrolled.
pub fn tail_bound(
    model: &MfLqModel,
    kx: &RegimeFamily,
    khat: &RegimeFamily,
    x0: &DVector<f64>,
    horizon: f64,
) -> Result<f64> {
    check_feedback_shapes(model, kx, khat, x0, 0)?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let (n, m) = (model.state_dim(), model.regimes());
    let r = model.discount();
    let mut margin = f64::INFINITY;
    let mut rate_coeff = 0.0f64;
    for i in 0..m {
        let a_k = &model.a[i] + &model.b[i] * &kx[i];
        let ah_k = &model.a_hat[i] + &model.b[i] * &khat[i];
        let mean_flow = &model.a[i] + &model.a_hat[i] + &model.b[i] * (&kx[i] + &khat[i]);
        let c_k = &model.c[i] + &model.d[i] * &kx[i];
        let ch_k = &model.c_hat[i] + &model.d[i] * &khat[i];

        let mut g = DMatrix::zeros(2 * n, 2 * n);
        g.view_mut((0, 0), (n, n)).copy_from(&a_k);
        g.view_mut((0, n), (n, n)).copy_from(&ah_k);
        g.view_mut((n, n), (n, n)).copy_from(&mean_flow);
        let mut h_top = DMatrix::zeros(n, 2 * n);
        h_top.view_mut((0, 0), (n, n)).copy_from(&c_k);
        h_top.view_mut((0, n), (n, n)).copy_from(&ch_k);

        let s = DMatrix::identity(2 * n, 2 * n) * r
            - (&g + g.transpose())
            - h_top.transpose() * &h_top;
        margin = margin.min(family::min_symmetric_eigenvalue(&s));

        let q_top = family::max_symmetric_eigenvalue(&model.q[i])
            .max(family::max_symmetric_eigenvalue(&model.q_hat[i]));
        let r_top = family::max_symmetric_eigenvalue(&model.r_ctrl[i]);
        let k_sq = kx[i].norm().powi(2) + khat[i].norm().powi(2);
        rate_coeff = rate_coeff.max(0.5 * (q_top.max(0.0) + r_top.max(0.0) * k_sq));
    }
    if margin <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let z0_sq = 2.0 * x0.norm_squared();
    Ok(rate_coeff * z0_sq * (-margin * horizon).exp() / margin)
}

/// Estimate the discounted cost of the feedback `u = K(α)X + K̂(α)X̂`.
pub fn estimate_cost(
    model: &MfLqModel,
    kx: &RegimeFamily,
    khat: &RegimeFamily,
    x0: &DVector<f64>,
    i0: usize,
    config: &SimConfig,
) -> Result<CostEstimate> {
    let costs = per_path_costs(model, kx, khat, x0, i0, config)?;
    let (mean, standard_error) = mean_and_se(&costs);
    let tail = tail_bound(model, kx, khat, x0, config.horizon)?;
    Ok(CostEstimate {
        mean,
        standard_error,
        paths: config.paths,
        horizon: config.horizon,
        step: config.step,
        tail_bound: tail,
    })
}

/// Recompute the discounted-cost quadrature from a stored trajectory.
///
/// Bit-identical to what the streaming estimator accumulates for the same
/// path, which ties the two code paths together.
pub fn discounted_cost_of(model: &MfLqModel, path: &PathTrajectory) -> Result<f64> {
    let (n, k) = (model.state_dim(), model.control_dim());
    let mut x = DVector::zeros(n);
    let mut xhat = DVector::zeros(n);
    let mut u = DVector::zeros(k);
    let mut qbuf = DVector::zeros(n);
    let mut rbuf = DVector::zeros(k);
    let discount = model.discount();
    let mut cost = 0.0;
    for j in 0..path.len().saturating_sub(1) {
        let regime = path.regimes[j];
        if regime >= model.regimes() {
            return Err(Error::RegimeIndex {
                index: regime,
                regimes: model.regimes(),
            });
        }
        if path.state(j).len() != n || path.control(j).len() != k {
            return Err(Error::Shape(
                "trajectory dimensions do not match the model".into(),
            ));
        }
        x.as_mut_slice().copy_from_slice(path.state(j));
        xhat.as_mut_slice().copy_from_slice(path.mean(j));
        u.as_mut_slice().copy_from_slice(path.control(j));
        let t = path.times[j];
        let dt = path.times[j + 1] - t;
        let disc = (-discount * t).exp();
        qbuf.gemv(1.0, &model.q[regime], &x, 0.0);
        let mut rate = x.dot(&qbuf);
        qbuf.gemv(1.0, &model.q_hat[regime], &xhat, 0.0);
        rate += xhat.dot(&qbuf);
        rbuf.gemv(1.0, &model.r_ctrl[regime], &u, 0.0);
        rate += u.dot(&rbuf);
        cost += 0.5 * disc * rate * dt;
    }
    Ok(cost)
}

/// Compare an estimate to an analytic value: `z = deviation/SE`, pass when
/// the deviation fits within `3·SE + tail_bound + bias_budget`.
pub fn compare_value(estimate: &CostEstimate, analytic: f64, bias_budget: f64) -> ValueComparison {
    let deviation = estimate.mean - analytic;
    let z_score = if deviation == 0.0 {
        0.0
    } else {
        deviation / estimate.standard_error
    };
    let allowance = 3.0 * estimate.standard_error + estimate.tail_bound + bias_budget;
    ValueComparison {
        z_score,
        deviation,
        allowance,
        pass: deviation.abs() <= allowance,
    }
}

/// Calibrate the `O(h)` quadrature/discretization bias by step halving with
/// shared seeds.
pub fn calibrate_bias_budget(
    model: &MfLqModel,
    kx: &RegimeFamily,
    khat: &RegimeFamily,
    x0: &DVector<f64>,
    i0: usize,
    config: &SimConfig,
) -> Result<BiasBudget> {
    let coarse = estimate_cost(model, kx, khat, x0, i0, config)?;
    let fine_cfg = SimConfig {
        step: config.step / 2.0,
        ..*config
    };
    let fine = estimate_cost(model, kx, khat, x0, i0, &fine_cfg)?;
    let combined_se = (coarse.standard_error.powi(2) + fine.standard_error.powi(2)).sqrt();
    let budget = 2.0 * (coarse.mean - fine.mean).abs() + 3.0 * combined_se;
    Ok(BiasBudget {
        coarse,
        fine,
        combined_se,
        budget,
    })
}

/// Estimate `e^{−rt}E|X(t)|²` at each checkpoint from one path ensemble
/// under the feedback `(K, K̂)`.
pub fn decay_check(
    model: &MfLqModel,
    kx: &RegimeFamily,
    khat: &RegimeFamily,
    x0: &DVector<f64>,
    i0: usize,
    config: &SimConfig,
    checkpoints: &[f64],
) -> Result<DecaySeries> {
    config.validate()?;
    if checkpoints.is_empty() {
        return Err(Error::Config("at least one checkpoint is required".into()));
    }
    for &c in checkpoints {
        if !(c.is_finite() && (0.0..=config.horizon).contains(&c)) {
            return Err(Error::Config(format!(
                "checkpoints must lie in [0, horizon = {}], got {c}",
                config.horizon
            )));
        }
    }
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by(|&a, &b| checkpoints[a].total_cmp(&checkpoints[b]));
    let sorted: Vec<f64> = order.iter().map(|&l| checkpoints[l]).collect();

    let outcomes = per_path_outcomes(model, kx, khat, x0, i0, config, &sorted)?;
    // position of original checkpoint l in the sorted list
    let mut pos = vec![0usize; checkpoints.len()];
    for (sorted_idx, &orig) in order.iter().enumerate() {
        pos[orig] = sorted_idx;
    }
    let mut per_path = Vec::with_capacity(checkpoints.len());
    let mut points = Vec::with_capacity(checkpoints.len());
    for (l, &time) in checkpoints.iter().enumerate() {
        let values: Vec<f64> = outcomes.iter().map(|o| o.checkpoints[pos[l]]).collect();
        let (mean, standard_error) = mean_and_se(&values);
        points.push(DecayPoint {
            time,
            mean,
            standard_error,
        });
        per_path.push(values);
    }
    Ok(DecaySeries { points, per_path })
}

/// Evaluate the optimality-condition residual along stored trajectories.
pub fn stationarity_residual(
    model: &MfLqModel,
    solution: &AreSolution,
    set: &TrajectorySet,
) -> Result<StationarityReport> {
    stationarity_residual_with(model, &solution.p, &solution.p_hat, set)
}

/// [`stationarity_residual`] taking the value matrices directly, so a
/// solution loaded from a file (possibly hand-edited) is evaluated exactly
/// as given.
pub fn stationarity_residual_with(
    model: &MfLqModel,
    p: &RegimeFamily,
    p_hat: &RegimeFamily,
    set: &TrajectorySet,
) -> Result<StationarityReport> {
    let (n, k, m) = (model.state_dim(), model.control_dim(), model.regimes());
    if set.state_dim != n || set.control_dim != k {
        return Err(Error::Shape(format!(
            "trajectory set is {}-state/{}-control, model is {n}-state/{k}-control",
            set.state_dim, set.control_dim
        )));
    }
    for (name, fam) in [("P", p), ("Phat", p_hat)] {
        if fam.len() != m || fam.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "{name} does not match the model's dimensions"
            )));
        }
    }
    let mut x = DVector::zeros(n);
    let mut xhat = DVector::zeros(n);
    let mut u = DVector::zeros(k);
    let mut p_vec = DVector::zeros(n);
    let mut q_arg = DVector::zeros(n);
    let mut q_vec = DVector::zeros(n);
    let mut res = DVector::zeros(k);

    let mut norms = Vec::with_capacity(set.paths.len());
    let mut max_norm = 0.0f64;
    let mut max_state_norm = 0.0f64;
    let mut path_sums = Vec::with_capacity(set.paths.len());
    let mut count = 0usize;
    for path in &set.paths {
        let mut path_norms = Vec::with_capacity(path.len());
        for j in 0..path.len() {
            let regime = path.regimes[j];
            if regime >= m {
                return Err(Error::RegimeIndex {
                    index: regime,
                    regimes: m,
                });
            }
            x.as_mut_slice().copy_from_slice(path.state(j));
            xhat.as_mut_slice().copy_from_slice(path.mean(j));
            u.as_mut_slice().copy_from_slice(path.control(j));

            p_vec.gemv(1.0, &p[regime], &x, 0.0);
            p_vec.gemv(1.0, &p_hat[regime], &xhat, 1.0);
            q_arg.gemv(1.0, &model.c[regime], &x, 0.0);
            q_arg.gemv(1.0, &model.c_hat[regime], &xhat, 1.0);
            q_arg.gemv(1.0, &model.d[regime], &u, 1.0);
            q_vec.gemv(1.0, &p[regime], &q_arg, 0.0);
            res.gemv(1.0, &model.r_ctrl[regime], &u, 0.0);
            res.gemv_tr(1.0, &model.b[regime], &p_vec, 1.0);
            res.gemv_tr(1.0, &model.d[regime], &q_vec, 1.0);

            let norm = res.norm();
            max_norm = max_norm.max(norm);
            max_state_norm = max_state_norm.max(x.norm());
            path_norms.push(norm);
        }
        count += path_norms.len();
        path_sums.push(pairwise_sum(&path_norms));
        norms.push(path_norms);
    }
    let mean_norm = pairwise_sum(&path_sums) / count as f64;
    Ok(StationarityReport {
        norms,
        max_norm,
        mean_norm,
        max_state_norm,
    })
}

/// The fixed probe direction: the all-ones `k×n` matrix scaled to unit
/// Frobenius norm.
pub fn probe_direction(k: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_element(k, n, 1.0 / ((k * n) as f64).sqrt())
}

/// Compare the optimal cost against the cost of the perturbed state gain
/// `Θ + δ·E` (same `Θ̂`), with common random numbers across the two arms.
pub fn suboptimality_probe(
    model: &MfLqModel,
    solution: &AreSolution,
    delta: f64,
    x0: &DVector<f64>,
    i0: usize,
    config: &SimConfig,
) -> Result<ProbeResult> {
    suboptimality_probe_with(
        model,
        &solution.gains.theta,
        &solution.gains.theta_hat,
        delta,
        x0,
        i0,
        config,
    )
}

/// [`suboptimality_probe`] taking the gain families directly (e.g. from a
/// solution file).
#[allow(clippy::too_many_arguments)]
pub fn suboptimality_probe_with(
    model: &MfLqModel,
    theta: &RegimeFamily,
    theta_hat: &RegimeFamily,
    delta: f64,
    x0: &DVector<f64>,
    i0: usize,
    config: &SimConfig,
) -> Result<ProbeResult> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Config(format!(
            "perturbation size must be nonnegative, got {delta}"
        )));
    }
    let direction = probe_direction(model.control_dim(), model.state_dim());
    let kx_pert = theta.map(|_, t| t + delta * &direction)?;

    let costs_opt = per_path_costs(model, theta, theta_hat, x0, i0, config)?;
    let costs_pert = per_path_costs(model, &kx_pert, theta_hat, x0, i0, config)?;

    let (mean_opt, se_opt) = mean_and_se(&costs_opt);
    let (mean_pert, se_pert) = mean_and_se(&costs_pert);
    let diffs: Vec<f64> = costs_pert
        .iter()
        .zip(&costs_opt)
        .map(|(a, b)| a - b)
        .collect();
    let (gap, paired_se) = mean_and_se(&diffs);

    let j_optimal = CostEstimate {
        mean: mean_opt,
        standard_error: se_opt,
        paths: config.paths,
        horizon: config.horizon,
        step: config.step,
        tail_bound: tail_bound(model, theta, theta_hat, x0, config.horizon)?,
    };
    let j_perturbed = CostEstimate {
        mean: mean_pert,
        standard_error: se_pert,
        paths: config.paths,
        horizon: config.horizon,
        step: config.step,
        tail_bound: tail_bound(model, &kx_pert, theta_hat, x0, config.horizon)?,
    };
    Ok(ProbeResult {
        j_optimal,
        j_perturbed,
        gap,
        paired_se,
        pass: gap >= -3.0 * paired_se,
    })
}
