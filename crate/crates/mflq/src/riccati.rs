//! Coupled algebraic Riccati systems and the optimal feedback gains.
//!
//! Two systems are solved, both families of `M` coupled symmetric unknowns.
//! The state-level system, with `R̃ = R + DᵀPD`, `S = BᵀP + DᵀPC`:
//!
//! ```text
//! rP(i) = P(i)A(i) + Aᵀ(i)P(i) + Cᵀ(i)P(i)C(i) + Q(i)
//!         − Sᵀ(i)R̃⁻¹(i)S(i) + Σ_j λ_ij P(j),      R̃(i) ≻ 0,
//! ```
//!
//! and the conditional-mean-level system for `P̃` (with `Ã = A+Â`,
//! `C̃ = C+Ĉ`, `Q̃ = Q+Q̂`, `S̃ = BᵀP̃ + DᵀPC̃`):
//!
//! ```text
//! rP̃(i) = P̃(i)Ã(i) + Ãᵀ(i)P̃(i) + C̃ᵀ(i)P(i)C̃(i) + Q̃(i)
//!         − S̃ᵀ(i)R̃⁻¹(i)S̃(i) + Σ_j λ_ij P̃(j).
//! ```
//!
//! The optimal feedback is `u = Θ(α)X + Θ̂(α)X̂` with `Θ = −R̃⁻¹S`,
//! `Θ̃ = −R̃⁻¹S̃`, `Θ̂ = Θ̃ − Θ`, and the minimal cost from initial state
//! `x` in regime `i` is `½ xᵀP̃(i)x`.
//!
//! Both systems are solved by quasi-linearization: each step freezes the
//! gain, leaving a coupled Lyapunov equation, whose solutions decrease
//! monotonically (in the semidefinite order) to the Riccati solution. For
//! the mean-level system two update variants exist: `exact` augments the
//! Lyapunov source with the cross terms `Θ̃ᵀC̄ + C̄ᵀΘ̃` (where `C̄ = DᵀPC̃`)
//! so the fixed point solves the equation above exactly; `published`
//! runs the update exactly as printed in the published source, whose fixed
//! point instead solves that equation perturbed by `C̄ᵀR̃⁻¹S̃ + S̃ᵀR̃⁻¹C̄`.
//! The literal variant is kept for comparison and flagged with a warning.

use nalgebra::{Cholesky, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::RegimeFamily;
use crate::lyapunov::{solve_coupled_lyapunov, LyapunovProblem};
use crate::model::MfLqModel;

/// Default residual tolerance for both Riccati iterations.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 200;

/// Which update the mean-level iteration uses (see module docs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Are3Variant {
    /// Cross terms included: the fixed point solves the mean-level equation
    /// exactly. Default.
    Exact,
    /// Update exactly as printed in the published source; its fixed point
    /// solves a perturbed equation, so the exact-equation residual need not
    /// vanish.
    Published,
}

impl std::fmt::Display for Are3Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Are3Variant::Exact => write!(f, "exact"),
            Are3Variant::Published => write!(f, "published"),
        }
    }
}

/// Feedback-gain bundle derived from a solution pair `(P, P̃)`.
///
/// Definitions: `R̃ = R + DᵀPD` (positive definite), `S = BᵀP + DᵀPC`,
/// `S̃ = BᵀP̃ + DᵀPC̃`, `Ŝ = S̃ − S`, `Θ = −R̃⁻¹S`, `Θ̃ = −R̃⁻¹S̃`,
/// `Θ̂ = Θ̃ − Θ` (cross-checked against `−R̃⁻¹Ŝ` on construction).
#[derive(Debug, Clone)]
pub struct GainSet {
    pub r_tilde: RegimeFamily,
    pub s: RegimeFamily,
    pub s_tilde: RegimeFamily,
    pub s_hat: RegimeFamily,
    pub theta: RegimeFamily,
    pub theta_tilde: RegimeFamily,
    pub theta_hat: RegimeFamily,
}

/// One recorded quasi-linearization iteration.
///
/// `residuals` are per-regime Frobenius norms of the targeted equation's
/// defect at the current iterate. For iterations followed by an update step,
/// `step_frobenius` is the largest per-regime `‖P_k − P_{k+1}‖` and
/// `step_min_eigenvalue` the smallest eigenvalue of `P_k − P_{k+1}` across
/// regimes (nonnegative up to round-off, by monotonicity).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residuals: Vec<f64>,
    pub step_frobenius: Option<f64>,
    pub step_min_eigenvalue: Option<f64>,
}

/// Full record of one quasi-linearization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Number of Lyapunov update steps performed after the initializer.
    pub iterations: usize,
    pub warning: Option<String>,
}

impl IterationTrace {
    pub fn max_residual(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.residuals.iter().fold(0.0f64, |a, &v| a.max(v)))
            .unwrap_or(f64::NAN)
    }
}

/// Solved Riccati pair with gains, traces, and final residuals.
///
/// `residual3` always reports the defect of the exact mean-level equation;
/// under the `published` variant it will generally not be small (the
/// warning on `trace3` says so).
#[derive(Debug, Clone)]
pub struct AreSolution {
    pub p: RegimeFamily,
    pub p_tilde: RegimeFamily,
    pub p_hat: RegimeFamily,
    pub gains: GainSet,
    pub trace1: IterationTrace,
    pub trace3: IterationTrace,
    pub residual1: Vec<f64>,
    pub residual3: Vec<f64>,
    pub variant: Are3Variant,
}

/// Solver options for [`solve`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub variant: Are3Variant,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            variant: Are3Variant::Exact,
        }
    }
}

/// Cholesky factors of `R̃(i) = R(i) + Dᵀ(i)P(i)D(i)` for every regime.
fn rtilde_factors(model: &MfLqModel, p: &RegimeFamily) -> Result<Vec<Cholesky<f64, Dyn>>> {
    (0..model.regimes())
        .map(|i| {
            let d = &model.d[i];
            let rt = &model.r_ctrl[i] + d.transpose() * &p[i] * d;
            let rt = (&rt + rt.transpose()) * 0.5;
            Cholesky::new(rt).ok_or_else(|| Error::NotPositiveDefinite {
                context: format!("R + D^T P D in regime {i}"),
            })
        })
        .collect()
}

fn check_candidate(p: &RegimeFamily, model: &MfLqModel, what: &str) -> Result<()> {
    let n = model.state_dim();
    if p.len() != model.regimes() || p.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "{what} has {} entries of {}x{}, expected {} of {n}x{n}",
            p.len(),
            p.shape().0,
            p.shape().1,
            model.regimes()
        )));
    }
    Ok(())
}

/// Per-regime Frobenius defect of the state-level Riccati equation at `p`.
pub fn are1_residual(p: &RegimeFamily, model: &MfLqModel) -> Result<Vec<f64>> {
    check_candidate(p, model, "P")?;
    let chols = rtilde_factors(model, p)?;
    let m = model.regimes();
    Ok((0..m)
        .map(|i| {
            let (a, c) = (&model.a[i], &model.c[i]);
            let s = model.b[i].transpose() * &p[i] + model.d[i].transpose() * &p[i] * c;
            let mut e = &p[i] * a + a.transpose() * &p[i] + c.transpose() * &p[i] * c
                + &model.q[i]
                - s.transpose() * chols[i].solve(&s)
                - &p[i] * model.discount();
            for j in 0..m {
                e += &p[j] * model.generator()[(i, j)];
            }
            e.norm()
        })
        .collect())
}

/// Per-regime Frobenius defect of the mean-level Riccati equation at
/// `(p_tilde, p)`.
pub fn are3_residual(p_tilde: &RegimeFamily, p: &RegimeFamily, model: &MfLqModel) -> Result<Vec<f64>> {
    check_candidate(p, model, "P")?;
    check_candidate(p_tilde, model, "Ptilde")?;
    let chols = rtilde_factors(model, p)?;
    let m = model.regimes();
    Ok((0..m)
        .map(|i| {
            let at = &model.a[i] + &model.a_hat[i];
            let ct = &model.c[i] + &model.c_hat[i];
            let qt = &model.q[i] + &model.q_hat[i];
            let st = model.b[i].transpose() * &p_tilde[i] + model.d[i].transpose() * &p[i] * &ct;
            let mut e = &p_tilde[i] * &at + at.transpose() * &p_tilde[i] + ct.transpose() * &p[i] * ct
                + qt
                - st.transpose() * chols[i].solve(&st)
                - &p_tilde[i] * model.discount();
            for j in 0..m {
                e += &p_tilde[j] * model.generator()[(i, j)];
            }
            e.norm()
        })
        .collect())
}

/// Defect of the equation the literal published update actually fixes:
/// the mean-level equation perturbed by `C̄ᵀR̃⁻¹S̃ + S̃ᵀR̃⁻¹C̄`.
fn literal_defect(p_tilde: &RegimeFamily, p: &RegimeFamily, model: &MfLqModel) -> Result<Vec<f64>> {
    let chols = rtilde_factors(model, p)?;
    let m = model.regimes();
    Ok((0..m)
        .map(|i| {
            let at = &model.a[i] + &model.a_hat[i];
            let ct = &model.c[i] + &model.c_hat[i];
            let qt = &model.q[i] + &model.q_hat[i];
            let cbar = model.d[i].transpose() * &p[i] * &ct;
            let st = model.b[i].transpose() * &p_tilde[i] + &cbar;
            let rinv_st = chols[i].solve(&st);
            let mut e = &p_tilde[i] * &at + at.transpose() * &p_tilde[i] + ct.transpose() * &p[i] * ct
                + qt
                - st.transpose() * &rinv_st
                + cbar.transpose() * &rinv_st
                + rinv_st.transpose() * &cbar
                - &p_tilde[i] * model.discount();
            for j in 0..m {
                e += &p_tilde[j] * model.generator()[(i, j)];
            }
            e.norm()
        })
        .collect())
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x))
}

fn step_statistics(current: &RegimeFamily, next: &RegimeFamily) -> (f64, f64) {
    let frob = current.max_frobenius_diff(next);
    let min_eig = (0..current.len())
        .map(|i| crate::family::min_symmetric_eigenvalue(&(&current[i] - &next[i])))
        .fold(f64::INFINITY, f64::min);
    (frob, min_eig)
}

/// Solve the state-level Riccati system by monotone quasi-linearization.
///
/// Starts from the Lyapunov solution with source `Q`, then repeatedly
/// freezes the gain `Θ_k = −(R+DᵀP_kD)⁻¹(BᵀP_k+DᵀP_kC)` and solves the
/// Lyapunov system with `A_k = A+BΘ_k`, `C_k = C+DΘ_k`,
/// `Q_k = Q+Θ_kᵀRΘ_k`. Stops when every per-regime defect is at most `tol`.
pub fn solve_are1(model: &MfLqModel, tol: f64, max_iter: usize) -> Result<(RegimeFamily, IterationTrace)> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    let generator = model.generator().clone();
    let base = LyapunovProblem::new(
        model.a.clone(),
        model.c.clone(),
        model.q.clone(),
        generator.clone(),
        model.discount(),
    )?;
    let mut p = solve_coupled_lyapunov(&base)?.p;
    let mut records = Vec::new();
    for iteration in 0..=max_iter {
        let residuals = are1_residual(&p, model)?;
        let max_res = max_of(&residuals);
        if max_res <= tol {
            records.push(IterationRecord {
                iteration,
                residuals,
                step_frobenius: None,
                step_min_eigenvalue: None,
            });
            let iterations = iteration;
            return Ok((
                p,
                IterationTrace {
                    records,
                    converged: true,
                    iterations,
                    warning: None,
                },
            ));
        }
        if iteration == max_iter {
            return Err(Error::NoConvergence {
                what: "state-level Riccati quasi-linearization",
                max_iter,
                residual: max_res,
                tol,
            });
        }
        let chols = rtilde_factors(model, &p)?;
        let mut a_k = Vec::with_capacity(model.regimes());
        let mut c_k = Vec::with_capacity(model.regimes());
        let mut q_k = Vec::with_capacity(model.regimes());
        for i in 0..model.regimes() {
            let s = model.b[i].transpose() * &p[i] + model.d[i].transpose() * &p[i] * &model.c[i];
            let theta = -chols[i].solve(&s);
            a_k.push(&model.a[i] + &model.b[i] * &theta);
            c_k.push(&model.c[i] + &model.d[i] * &theta);
            let tr = theta.transpose() * &model.r_ctrl[i] * &theta;
            q_k.push(&model.q[i] + (&tr + tr.transpose()) * 0.5);
        }
        let next = solve_coupled_lyapunov(&LyapunovProblem::new(
            RegimeFamily::new(a_k)?,
            RegimeFamily::new(c_k)?,
            RegimeFamily::new(q_k)?,
            generator.clone(),
            model.discount(),
        )?)?
        .p;
        let (step_frobenius, step_min_eigenvalue) = step_statistics(&p, &next);
        records.push(IterationRecord {
            iteration,
            residuals,
            step_frobenius: Some(step_frobenius),
            step_min_eigenvalue: Some(step_min_eigenvalue),
        });
        p = next;
    }
    unreachable!("loop returns or errors before falling through")
}

/// Solve the mean-level Riccati system for `P̃`, given the state-level
/// solution `p`.
///
/// The iteration freezes `Θ̃_k = −R̃⁻¹(BᵀP̃_k + C̄)` with `C̄ = DᵀPC̃` and
/// solves Lyapunov systems in the drift `Ã_k = Ã + BΘ̃_k` with no
/// second-order flow term (the `C̃ᵀPC̃` contribution rides in the source
/// `Q̄ = C̃ᵀPC̃ + Q̃`). The `variant` picks the update's source term; see
/// the module docs for what each converges to.
pub fn solve_are3(
    model: &MfLqModel,
    p: &RegimeFamily,
    tol: f64,
    max_iter: usize,
    variant: Are3Variant,
) -> Result<(RegimeFamily, IterationTrace)> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    check_candidate(p, model, "P")?;
    let (m, n) = (model.regimes(), model.state_dim());
    let generator = model.generator().clone();
    let chols = rtilde_factors(model, p)?;
    let zero_c = RegimeFamily::zeros(m, n, n);

    let mut a_tilde = Vec::with_capacity(m);
    let mut c_bar = Vec::with_capacity(m);
    let mut q_bar = Vec::with_capacity(m);
    for i in 0..m {
        let at = &model.a[i] + &model.a_hat[i];
        let ct = &model.c[i] + &model.c_hat[i];
        let qt = &model.q[i] + &model.q_hat[i];
        let cb = model.d[i].transpose() * &p[i] * &ct;
        let qb = ct.transpose() * &p[i] * &ct + qt;
        a_tilde.push(at);
        c_bar.push(cb);
        q_bar.push((&qb + qb.transpose()) * 0.5);
    }
    let a_tilde = RegimeFamily::new(a_tilde)?;
    let q_bar = RegimeFamily::new(q_bar)?;

    let mut p_tilde = solve_coupled_lyapunov(&LyapunovProblem::new(
        a_tilde.clone(),
        zero_c.clone(),
        q_bar.clone(),
        generator.clone(),
        model.discount(),
    )?)?
    .p;

    let warning = match variant {
        Are3Variant::Exact => None,
        Are3Variant::Published => Some(
            "literal published update: its fixed point solves the mean-level equation \
             perturbed by Cbar^T Rt^{-1} St + St^T Rt^{-1} Cbar, so the exact-equation \
             residual need not vanish"
                .to_string(),
        ),
    };

    let mut records = Vec::new();
    for iteration in 0..=max_iter {
        let residuals = match variant {
            Are3Variant::Exact => are3_residual(&p_tilde, p, model)?,
            Are3Variant::Published => literal_defect(&p_tilde, p, model)?,
        };
        let max_res = max_of(&residuals);
        if max_res <= tol {
            records.push(IterationRecord {
                iteration,
                residuals,
                step_frobenius: None,
                step_min_eigenvalue: None,
            });
            return Ok((
                p_tilde,
                IterationTrace {
                    records,
                    converged: true,
                    iterations: iteration,
                    warning,
                },
            ));
        }
        if iteration == max_iter {
            return Err(Error::NoConvergence {
                what: "mean-level Riccati quasi-linearization",
                max_iter,
                residual: max_res,
                tol,
            });
        }
        let mut a_k = Vec::with_capacity(m);
        let mut q_k = Vec::with_capacity(m);
        for i in 0..m {
            let st = model.b[i].transpose() * &p_tilde[i] + &c_bar[i];
            let theta_tilde = -chols[i].solve(&st);
            a_k.push(&a_tilde[i] + &model.b[i] * &theta_tilde);
            // Θ̃ᵀR̃Θ̃ = S̃ᵀR̃⁻¹S̃ at the frozen gain.
            let quad = st.transpose() * chols[i].solve(&st);
            let mut src = &q_bar[i] + (&quad + quad.transpose()) * 0.5;
            if variant == Are3Variant::Exact {
                let cross = theta_tilde.transpose() * &c_bar[i];
                src += &cross + cross.transpose();
            }
            q_k.push(src);
        }
        let next = solve_coupled_lyapunov(&LyapunovProblem::new(
            RegimeFamily::new(a_k)?,
            zero_c.clone(),
            RegimeFamily::new(q_k)?,
            generator.clone(),
            model.discount(),
        )?)?
        .p;
        let (step_frobenius, step_min_eigenvalue) = step_statistics(&p_tilde, &next);
        records.push(IterationRecord {
            iteration,
            residuals,
            step_frobenius: Some(step_frobenius),
            step_min_eigenvalue: Some(step_min_eigenvalue),
        });
        p_tilde = next;
    }
    unreachable!("loop returns or errors before falling through")
}

/// Assemble the full gain bundle from a solution pair.
pub fn compute_gains(p: &RegimeFamily, p_tilde: &RegimeFamily, model: &MfLqModel) -> Result<GainSet> {
    check_candidate(p, model, "P")?;
    check_candidate(p_tilde, model, "Ptilde")?;
    let chols = rtilde_factors(model, p)?;
    let m = model.regimes();
    let mut r_tilde = Vec::with_capacity(m);
    let mut s_fam = Vec::with_capacity(m);
    let mut s_tilde_fam = Vec::with_capacity(m);
    let mut s_hat_fam = Vec::with_capacity(m);
    let mut theta_fam = Vec::with_capacity(m);
    let mut theta_tilde_fam = Vec::with_capacity(m);
    let mut theta_hat_fam = Vec::with_capacity(m);
    for i in 0..m {
        let d = &model.d[i];
        let rt = &model.r_ctrl[i] + d.transpose() * &p[i] * d;
        let ct = &model.c[i] + &model.c_hat[i];
        let s = model.b[i].transpose() * &p[i] + d.transpose() * &p[i] * &model.c[i];
        let s_tilde = model.b[i].transpose() * &p_tilde[i] + d.transpose() * &p[i] * &ct;
        let s_hat = &s_tilde - &s;
        let theta = -chols[i].solve(&s);
        let theta_tilde = -chols[i].solve(&s_tilde);
        let theta_hat = &theta_tilde - &theta;
        // Consistency of the two definitions of Θ̂; failure indicates
        // corrupted inputs rather than round-off.
        let direct = -chols[i].solve(&s_hat);
        let drift = (&theta_hat - &direct).norm();
        let limit = 1e-12 * (1.0 + theta_hat.norm());
        if drift > limit {
            return Err(Error::ResidualCheck {
                context: format!("gain consistency (regime {i})"),
                residual: drift,
                limit,
            });
        }
        r_tilde.push((&rt + rt.transpose()) * 0.5);
        s_fam.push(s);
        s_tilde_fam.push(s_tilde);
        s_hat_fam.push(s_hat);
        theta_fam.push(theta);
        theta_tilde_fam.push(theta_tilde);
        theta_hat_fam.push(theta_hat);
    }
    Ok(GainSet {
        r_tilde: RegimeFamily::new(r_tilde)?,
        s: RegimeFamily::new(s_fam)?,
        s_tilde: RegimeFamily::new(s_tilde_fam)?,
        s_hat: RegimeFamily::new(s_hat_fam)?,
        theta: RegimeFamily::new(theta_fam)?,
        theta_tilde: RegimeFamily::new(theta_tilde_fam)?,
        theta_hat: RegimeFamily::new(theta_hat_fam)?,
    })
}

/// Minimal cost from state `x` in regime `i`: `½ xᵀ P̃(i) x`.
pub fn value_function(p_tilde: &RegimeFamily, x: &DVector<f64>, i: usize) -> Result<f64> {
    if i >= p_tilde.len() {
        return Err(Error::RegimeIndex {
            index: i,
            regimes: p_tilde.len(),
        });
    }
    if x.len() != p_tilde.shape().0 {
        return Err(Error::Shape(format!(
            "x has length {}, expected {}",
            x.len(),
            p_tilde.shape().0
        )));
    }
    Ok(0.5 * (x.transpose() * &p_tilde[i] * x)[(0, 0)])
}

/// Solve both Riccati systems, derive gains, and bundle everything.
pub fn solve(model: &MfLqModel, options: &SolveOptions) -> Result<AreSolution> {
    let (p, trace1) = solve_are1(model, options.tol, options.max_iter)?;
    let (p_tilde, trace3) = solve_are3(model, &p, options.tol, options.max_iter, options.variant)?;
    let residual1 = are1_residual(&p, model)?;
    let residual3 = are3_residual(&p_tilde, &p, model)?;
    let gains = compute_gains(&p, &p_tilde, model)?;
    let p_hat = p_tilde.map(|i, m| m - &p[i])?;
    Ok(AreSolution {
        p,
        p_tilde,
        p_hat,
        gains,
        trace1,
        trace3,
        residual1,
        residual3,
        variant: options.variant,
    })
}

/// On-disk solution document.
///
/// Matrices are lists of rows, families lists of matrices; `iterations1` /
/// `iterations3` count quasi-linearization updates; `residual3` is always
/// the exact mean-level defect.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDoc {
    #[serde(rename = "P")]
    pub p: RegimeFamily,
    #[serde(rename = "Ptilde")]
    pub p_tilde: RegimeFamily,
    #[serde(rename = "Phat")]
    pub p_hat: RegimeFamily,
    #[serde(rename = "Theta")]
    pub theta: RegimeFamily,
    #[serde(rename = "ThetaHat")]
    pub theta_hat: RegimeFamily,
    #[serde(rename = "ThetaTilde")]
    pub theta_tilde: RegimeFamily,
    #[serde(rename = "Rtilde")]
    pub r_tilde: RegimeFamily,
    pub residual1: Vec<f64>,
    pub residual3: Vec<f64>,
    pub iterations1: usize,
    pub iterations3: usize,
    pub variant: Are3Variant,
}

impl SolutionDoc {
    pub fn from_solution(sol: &AreSolution) -> Self {
        SolutionDoc {
            p: sol.p.clone(),
            p_tilde: sol.p_tilde.clone(),
            p_hat: sol.p_hat.clone(),
            theta: sol.gains.theta.clone(),
            theta_hat: sol.gains.theta_hat.clone(),
            theta_tilde: sol.gains.theta_tilde.clone(),
            r_tilde: sol.gains.r_tilde.clone(),
            residual1: sol.residual1.clone(),
            residual3: sol.residual3.clone(),
            iterations1: sol.trace1.iterations,
            iterations3: sol.trace3.iterations,
            variant: sol.variant,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serialization cannot fail")
    }

    /// Check dimensional consistency against a model.
    pub fn validate_against(&self, model: &MfLqModel) -> Result<()> {
        let (n, k, m) = (model.state_dim(), model.control_dim(), model.regimes());
        let expect = |fam: &RegimeFamily, name: &str, rows: usize, cols: usize| -> Result<()> {
            if fam.len() != m || fam.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "solution field {name}: {} entries of {}x{}, expected {m} of {rows}x{cols}",
                    fam.len(),
                    fam.shape().0,
                    fam.shape().1
                )));
            }
            Ok(())
        };
        expect(&self.p, "P", n, n)?;
        expect(&self.p_tilde, "Ptilde", n, n)?;
        expect(&self.p_hat, "Phat", n, n)?;
        expect(&self.theta, "Theta", k, n)?;
        expect(&self.theta_hat, "ThetaHat", k, n)?;
        expect(&self.theta_tilde, "ThetaTilde", k, n)?;
        expect(&self.r_tilde, "Rtilde", k, k)?;
        if self.residual1.len() != m || self.residual3.len() != m {
            return Err(Error::Shape(format!(
                "solution residual vectors have lengths {} and {}, expected {m}",
                self.residual1.len(),
                self.residual3.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[allow(clippy::too_many_arguments)]
    fn scalar_model(
        a: f64,
        ahat: f64,
        b: f64,
        c: f64,
        chat: f64,
        d: f64,
        q: f64,
        qhat: f64,
        r_w: f64,
        r: f64,
    ) -> MfLqModel {
        let one = |v: f64| RegimeFamily::new(vec![DMatrix::from_element(1, 1, v)]).unwrap();
        MfLqModel::new(
            r,
            DMatrix::zeros(1, 1),
            one(a),
            one(ahat),
            one(b),
            one(c),
            one(chat),
            one(d),
            one(q),
            one(qhat),
            one(r_w),
        )
        .unwrap()
    }

    /// Positive root of the scalar state-level Riccati equation
    /// `αP² + βP + γ = 0` with `α = (r−2a−c²)d² + (b+dc)²`,
    /// `β = (r−2a−c²)r_w − q d²`, `γ = −q r_w`.
    fn scalar_are1_root(a: f64, b: f64, c: f64, d: f64, q: f64, r_w: f64, r: f64) -> f64 {
        let margin = r - 2.0 * a - c * c;
        let alpha = margin * d * d + (b + d * c).powi(2);
        let beta = margin * r_w - q * d * d;
        let gamma = -q * r_w;
        if alpha.abs() < 1e-300 {
            return -gamma / beta;
        }
        (-beta + (beta * beta - 4.0 * alpha * gamma).sqrt()) / (2.0 * alpha)
    }

    #[test]
    fn golden_ratio_scalar_instance() {
        // A=0, B=1, C=D=0, Q=R=1, r=1: P² + P − 1 = 0, P = (√5−1)/2.
        let model = scalar_model(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0);
        let (p, trace) = solve_are1(&model, 1e-10, 200).unwrap();
        let expected = (5.0f64.sqrt() - 1.0) / 2.0;
        assert!((p[0][(0, 0)] - expected).abs() < 1e-9, "P = {}", p[0][(0, 0)]);
        assert!(trace.converged);
        let res = are1_residual(&p, &model).unwrap();
        assert!(res[0] <= 1e-10);
        // The closed form itself has residual ~0.
        let exact = RegimeFamily::new(vec![DMatrix::from_element(1, 1, expected)]).unwrap();
        assert!(are1_residual(&exact, &model).unwrap()[0] <= 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_solution_immediately() {
        let model = scalar_model(0.3, 0.0, 1.0, 0.2, 0.0, 0.1, 0.0, 0.0, 1.0, 2.0);
        let (p, trace) = solve_are1(&model, 1e-10, 200).unwrap();
        assert_eq!(p[0][(0, 0)], 0.0);
        assert_eq!(trace.iterations, 0);
        let res = are1_residual(&p, &model).unwrap();
        assert_eq!(res[0], 0.0);
    }

    #[test]
    fn scalar_quadratic_sweep() {
        // Generic scalar instances against the quadratic-formula oracle.
        let cases = [
            (0.4, 1.0, 0.3, 0.5, 2.0, 1.0, 3.0),
            (-0.5, 2.0, 0.2, 0.0, 1.0, 0.5, 2.0),
            (0.0, 1.5, 0.0, 0.8, 3.0, 2.0, 4.0),
        ];
        for (a, b, c, d, q, r_w, r) in cases {
            let model = scalar_model(a, 0.0, b, c, 0.0, d, q, 0.0, r_w, r);
            let (p, _) = solve_are1(&model, 1e-12, 200).unwrap();
            let oracle = scalar_are1_root(a, b, c, d, q, r_w, r);
            assert!(
                (p[0][(0, 0)] - oracle).abs() < 1e-9,
                "({a},{b},{c},{d},{q},{r_w},{r}): got {}, oracle {oracle}",
                p[0][(0, 0)]
            );
        }
    }

    #[test]
    fn mean_level_equation_collapses_without_mean_field_terms() {
        let model = scalar_model(0.4, 0.0, 1.0, 0.3, 0.0, 0.5, 2.0, 0.0, 1.0, 3.0);
        let (p, _) = solve_are1(&model, 1e-11, 200).unwrap();
        let (pt, trace) = solve_are3(&model, &p, 1e-10, 200, Are3Variant::Exact).unwrap();
        assert!(trace.converged);
        assert!((pt[0][(0, 0)] - p[0][(0, 0)]).abs() < 1e-9);
        // With no mean-field terms the two defect functions coincide.
        let r1 = are1_residual(&p, &model).unwrap();
        let r3 = are3_residual(&p, &p, &model).unwrap();
        assert!((r1[0] - r3[0]).abs() < 1e-12);
    }

    #[test]
    fn scalar_mean_level_quadratic_oracle() {
        // Generic scalar instance with genuine mean-field coefficients:
        // b² P̃² + (m̃ r̃ + 2 b d P c̃) P̃ + ((d P c̃)² − g r̃) = 0,
        // m̃ = r − 2ã, g = q̃ + c̃² P, r̃ = r_w + d² P.
        let (a, ahat, b, c, chat, d, q, qhat, r_w, r) =
            (0.3, -0.2, 1.2, 0.4, 0.3, 0.5, 1.0, 2.0, 0.8, 3.0);
        let model = scalar_model(a, ahat, b, c, chat, d, q, qhat, r_w, r);
        let (p, _) = solve_are1(&model, 1e-12, 200).unwrap();
        let (pt, trace) = solve_are3(&model, &p, 1e-11, 200, Are3Variant::Exact).unwrap();
        assert!(trace.converged);
        let pv = p[0][(0, 0)];
        let ptv = pt[0][(0, 0)];
        let (at, ct, qt) = (a + ahat, c + chat, q + qhat);
        let (mt, g, rt) = (r - 2.0 * at, qt + ct * ct * pv, r_w + d * d * pv);
        let qa = b * b;
        let qb = mt * rt + 2.0 * b * d * pv * ct;
        let qc = (d * pv * ct).powi(2) - g * rt;
        let disc = (qb * qb - 4.0 * qa * qc).sqrt();
        let roots = [(-qb + disc) / (2.0 * qa), (-qb - disc) / (2.0 * qa)];
        let best = roots
            .iter()
            .map(|r| (ptv - r).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-9, "Ptilde {ptv} vs roots {roots:?}");
        assert!(are3_residual(&pt, &p, &model).unwrap()[0] <= 1e-11);
        assert!(ptv >= 0.0);
    }

    #[test]
    fn literal_variant_converges_to_perturbed_equation() {
        let model = MfLqModel::reference_example();
        let (p, _) = solve_are1(&model, 1e-10, 200).unwrap();
        let (pt, trace) = solve_are3(&model, &p, 1e-10, 200, Are3Variant::Published).unwrap();
        assert!(trace.converged);
        assert!(trace.warning.is_some());
        let literal = literal_defect(&pt, &p, &model).unwrap();
        assert!(max_of(&literal) <= 1e-10);
        // The exact defect stays macroscopically nonzero here.
        let exact = are3_residual(&pt, &p, &model).unwrap();
        assert!(max_of(&exact) > 1e-2, "exact defect {exact:?}");
    }

    #[test]
    fn mean_level_defect_at_zero() {
        let model = MfLqModel::reference_example();
        let (p, _) = solve_are1(&model, 1e-10, 200).unwrap();
        let zero = RegimeFamily::zeros(4, 1, 1);
        let res = are3_residual(&zero, &p, &model).unwrap();
        for i in 0..4 {
            let pv = p[i][(0, 0)];
            let ct = model.c[i][(0, 0)] + model.c_hat[i][(0, 0)];
            let g = model.q[i][(0, 0)] + model.q_hat[i][(0, 0)] + ct * ct * pv;
            let cbar = model.d[i][(0, 0)] * pv * ct;
            let rt = model.r_ctrl[i][(0, 0)] + model.d[i][(0, 0)].powi(2) * pv;
            let expected = (g - cbar * cbar / rt).abs();
            assert!((res[i] - expected).abs() < 1e-12, "regime {i}");
        }
    }

    #[test]
    fn gains_from_rounded_published_solution_match_hand_arithmetic() {
        // Feeding the published 3-decimal P values through the gain formulas
        // reproduces the hand-computed regime-1 quotient −0.4332/0.55776.
        let model = MfLqModel::reference_example();
        let p = RegimeFamily::new(
            [0.361, 0.259, 0.171, 0.117]
                .iter()
                .map(|&v| DMatrix::from_element(1, 1, v))
                .collect(),
        )
        .unwrap();
        let gains = compute_gains(&p, &p, &model).unwrap();
        assert!((gains.r_tilde[0][(0, 0)] - 0.55776).abs() < 1e-12);
        assert!((gains.s[0][(0, 0)] - 0.4332).abs() < 1e-12);
        assert!((gains.theta[0][(0, 0)] - (-0.4332 / 0.55776)).abs() < 1e-12);
    }

    #[test]
    fn zero_solution_gains_are_trivial() {
        let model = MfLqModel::reference_example();
        let zero = RegimeFamily::zeros(4, 1, 1);
        let gains = compute_gains(&zero, &zero, &model).unwrap();
        for i in 0..4 {
            assert_eq!(gains.theta[i][(0, 0)], 0.0);
            assert_eq!(gains.theta_hat[i][(0, 0)], 0.0);
            assert_eq!(gains.r_tilde[i][(0, 0)], model.r_ctrl[i][(0, 0)]);
        }
    }

    #[test]
    fn gain_stationarity_at_convergence() {
        let model = MfLqModel::reference_example();
        let sol = solve(&model, &SolveOptions::default()).unwrap();
        for i in 0..4 {
            let lhs = &sol.gains.r_tilde[i] * &sol.gains.theta[i] + &sol.gains.s[i];
            assert!(lhs.norm() <= 1e-9, "regime {i}: {}", lhs.norm());
            let lhs_t = &sol.gains.r_tilde[i] * &sol.gains.theta_tilde[i] + &sol.gains.s_tilde[i];
            assert!(lhs_t.norm() <= 1e-9);
        }
    }

    #[test]
    fn one_more_step_is_a_fixed_point() {
        // Running one extra quasi-linearization step from the converged P
        // moves it by at most 10·tol.
        let model = MfLqModel::reference_example();
        let tol = 1e-10;
        let (p, _) = solve_are1(&model, tol, 200).unwrap();
        let chols = rtilde_factors(&model, &p).unwrap();
        let mut a_k = Vec::new();
        let mut c_k = Vec::new();
        let mut q_k = Vec::new();
        for i in 0..4 {
            let s = model.b[i].transpose() * &p[i] + model.d[i].transpose() * &p[i] * &model.c[i];
            let theta = -chols[i].solve(&s);
            a_k.push(&model.a[i] + &model.b[i] * &theta);
            c_k.push(&model.c[i] + &model.d[i] * &theta);
            q_k.push(&model.q[i] + theta.transpose() * &model.r_ctrl[i] * &theta);
        }
        let next = solve_coupled_lyapunov(&LyapunovProblem::new(
            RegimeFamily::new(a_k).unwrap(),
            RegimeFamily::new(c_k).unwrap(),
            RegimeFamily::new(q_k).unwrap(),
            model.generator().clone(),
            model.discount(),
        )
        .unwrap())
        .unwrap()
        .p;
        assert!(p.max_frobenius_diff(&next) <= 10.0 * tol);
    }

    #[test]
    fn value_function_arithmetic() {
        let pt = RegimeFamily::new(vec![DMatrix::from_element(1, 1, 0.687)]).unwrap();
        let v = value_function(&pt, &DVector::from_element(1, 2.0), 0).unwrap();
        assert!((v - 1.374).abs() < 1e-12);
        assert_eq!(
            value_function(&pt, &DVector::zeros(1), 0).unwrap(),
            0.0
        );
        let eye = RegimeFamily::new(vec![DMatrix::identity(2, 2)]).unwrap();
        let v = value_function(&eye, &DVector::from_column_slice(&[3.0, 4.0]), 0).unwrap();
        assert!((v - 12.5).abs() < 1e-12);
        assert!(matches!(
            value_function(&pt, &DVector::from_element(1, 1.0), 5),
            Err(Error::RegimeIndex { .. })
        ));
    }

    #[test]
    fn permutation_equivariance_of_full_solve() {
        let model = MfLqModel::reference_example();
        let perm = [3usize, 1, 0, 2];
        let relabel = |f: &RegimeFamily| RegimeFamily::from_fn(4, |i| f[perm[i]].clone()).unwrap();
        let gen_new =
            DMatrix::from_fn(4, 4, |i, j| model.generator()[(perm[i], perm[j])]);
        let permuted = MfLqModel::new(
            model.discount(),
            gen_new,
            relabel(&model.a),
            relabel(&model.a_hat),
            relabel(&model.b),
            relabel(&model.c),
            relabel(&model.c_hat),
            relabel(&model.d),
            relabel(&model.q),
            relabel(&model.q_hat),
            relabel(&model.r_ctrl),
        )
        .unwrap();
        let sol = solve(&model, &SolveOptions::default()).unwrap();
        let sol_p = solve(&permuted, &SolveOptions::default()).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert!((sol_p.p[i][(0, 0)] - sol.p[src][(0, 0)]).abs() < 1e-9);
            assert!((sol_p.p_tilde[i][(0, 0)] - sol.p_tilde[src][(0, 0)]).abs() < 1e-9);
            assert!((sol_p.gains.theta[i][(0, 0)] - sol.gains.theta[src][(0, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn rtilde_indefiniteness_is_reported() {
        // R = −1 (indefinite weight sneaks past load because only the
        // assumption check polices signs) makes R̃ fail its factorization.
        let model = scalar_model(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0);
        let p = RegimeFamily::zeros(1, 1, 1);
        assert!(matches!(
            are1_residual(&p, &model),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn solution_doc_round_trip() {
        let model = MfLqModel::reference_example();
        let sol = solve(&model, &SolveOptions::default()).unwrap();
        let doc = SolutionDoc::from_solution(&sol);
        doc.validate_against(&model).unwrap();
        let text = doc.to_json_string();
        let back = SolutionDoc::from_json_str(&text).unwrap();
        assert_eq!(back.to_json_string(), text);
        assert_eq!(back.variant, Are3Variant::Exact);
        assert_eq!(back.iterations1, sol.trace1.iterations);
    }
}
