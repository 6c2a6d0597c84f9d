//! Coupled algebraic Lyapunov system: direct solve and Monte Carlo oracle.
//!
//! The system, one symmetric unknown per regime coupled through the chain
//! generator:
//!
//! ```text
//! P(i)A(i) + Aᵀ(i)P(i) + Cᵀ(i)P(i)C(i) + Q(i) + Σ_j λ_ij P(j) − r P(i) = 0.
//! ```
//!
//! Under the discount-dominance condition the solution exists, is unique, and
//! has the probabilistic representation
//!
//! ```text
//! P(i) = E[ ∫₀^∞ e^{−rt} Φᵀ(t) Q(α(t)) Φ(t) dt | α(0) = i ],
//! dΦ = A(α)Φ dt + C(α)Φ dW,  Φ(0) = I,
//! ```
//!
//! which [`feynman_kac_estimate`] samples directly — an independent check on
//! the linear-algebra path.
//!
//! Method: stack the unknowns as the concatenation of the `M` vectorized
//! matrices (dimension `M·n²`), assemble the operator regime-block-wise —
//! block `(i,j)` is `δ_ij (Aᵀ⊗I + I⊗Aᵀ + Cᵀ⊗Cᵀ − rI) + λ_ij I` in the
//! column-major vec convention — and solve the dense system in one shot,
//! then symmetrize. Sizes here are tiny, so determinism and sharp residuals
//! beat iterative schemes; the singular value decomposition used for the
//! solve also yields the exact 2-norm condition number, refused above 1e14.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::RegimeFamily;
use crate::model::validate_generator;
use crate::simulate::{path_rng, refined_grid, sample_markov_path};

/// Condition estimates above this are treated as failure.
pub const CONDITION_LIMIT: f64 = 1e14;
/// Source matrices asymmetric beyond this are rejected.
pub const SOURCE_ASYMMETRY_LIMIT: f64 = 1e-10;

/// Data of one coupled Lyapunov system.
///
/// `a`, `c` are the flow coefficients, `q` the (symmetric) source, plus the
/// chain generator and the discount rate. The source is symmetrized on
/// construction (rejected beyond an asymmetry of 1e-10).
#[derive(Debug, Clone)]
pub struct LyapunovProblem {
    pub a: RegimeFamily,
    pub c: RegimeFamily,
    pub q: RegimeFamily,
    pub generator: DMatrix<f64>,
    pub discount: f64,
}

impl LyapunovProblem {
    pub fn new(
        a: RegimeFamily,
        c: RegimeFamily,
        q: RegimeFamily,
        generator: DMatrix<f64>,
        discount: f64,
    ) -> Result<Self> {
        validate_generator(&generator)?;
        let m = generator.nrows();
        let n = a.shape().0;
        for (name, fam) in [("A", &a), ("C", &c), ("Q", &q)] {
            if fam.len() != m {
                return Err(Error::Shape(format!(
                    "{name} has {} entries, expected {m}",
                    fam.len()
                )));
            }
            if fam.shape() != (n, n) {
                return Err(Error::Shape(format!(
                    "{name} entries are {}x{}, expected {n}x{n}",
                    fam.shape().0,
                    fam.shape().1
                )));
            }
        }
        for (i, mat) in q.iter().enumerate() {
            let asym = (mat - mat.transpose())
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            if asym > SOURCE_ASYMMETRY_LIMIT {
                return Err(Error::AsymmetricWeight {
                    name: "Q",
                    index: i,
                    asymmetry: asym,
                    limit: SOURCE_ASYMMETRY_LIMIT,
                });
            }
        }
        if !(discount.is_finite() && discount > 0.0) {
            return Err(Error::Config(format!(
                "discount must be positive and finite, got {discount}"
            )));
        }
        Ok(Self {
            a,
            c,
            q: q.symmetrized(),
            generator,
            discount,
        })
    }

    /// (regimes, state dimension).
    pub fn dims(&self) -> (usize, usize) {
        (self.generator.nrows(), self.a.shape().0)
    }

    /// Smallest discount-dominance margin `λ_min(rI − (A+Aᵀ+CᵀC))` over
    /// regimes — positive iff the flow integrals converge.
    pub fn growth_margin(&self) -> f64 {
        let (m, n) = self.dims();
        let eye = DMatrix::identity(n, n);
        (0..m)
            .map(|i| {
                let a = &self.a[i];
                let c = &self.c[i];
                let g = &eye * self.discount - (a + a.transpose() + c.transpose() * c);
                crate::family::min_symmetric_eigenvalue(&g)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Solution of a coupled Lyapunov solve, with the operator's condition number.
#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub p: RegimeFamily,
    pub condition: f64,
}

/// Solve the coupled system by one dense solve of the stacked operator.
pub fn solve_coupled_lyapunov(problem: &LyapunovProblem) -> Result<LyapunovSolution> {
    let (m, n) = problem.dims();
    let nn = n * n;
    let dim = m * nn;
    let eye_n = DMatrix::<f64>::identity(n, n);
    let mut op = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
    for i in 0..m {
        let at = problem.a[i].transpose();
        let ct = problem.c[i].transpose();
        let mut block = at.kronecker(&eye_n) + eye_n.kronecker(&at) + ct.kronecker(&ct);
        for d in 0..nn {
            block[(d, d)] -= problem.discount;
        }
        for j in 0..m {
            let lam = problem.generator[(i, j)];
            if i == j {
                for d in 0..nn {
                    block[(d, d)] += lam;
                }
            } else if lam != 0.0 {
                let mut view = op.view_mut((i * nn, j * nn), (nn, nn));
                for d in 0..nn {
                    view[(d, d)] += lam;
                }
            }
        }
        op.view_mut((i * nn, i * nn), (nn, nn)).copy_from(&block);
        // Column-major vectorization of the (symmetric) source.
        rhs.rows_mut(i * nn, nn)
            .copy_from_slice(problem.q[i].as_slice());
    }
    rhs.neg_mut();

    let svd = op.svd(true, true);
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |a, &v| a.max(v));
    let sigma_min = svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v));
    if sigma_min <= 0.0 || !sigma_min.is_finite() {
        return Err(Error::SingularSystem {
            context: "coupled Lyapunov system".into(),
        });
    }
    let condition = sigma_max / sigma_min;
    if condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned {
            context: "coupled Lyapunov system".into(),
            estimate: condition,
        });
    }
    let x = svd
        .solve(&rhs, 0.0)
        .map_err(|_| Error::SingularSystem {
            context: "coupled Lyapunov system".into(),
        })?;

    let p = RegimeFamily::from_fn(m, |i| {
        DMatrix::from_column_slice(n, n, x.as_slice().get(i * nn..(i + 1) * nn).unwrap())
    })?
    .symmetrized();

    // Internal residual check: a solve this small must hit its target.
    let residuals = lyapunov_residual(&p, problem)?;
    for (i, &res) in residuals.iter().enumerate() {
        let limit = 1e-10 * (1.0 + problem.q[i].norm());
        if res > limit {
            return Err(Error::ResidualCheck {
                context: format!("coupled Lyapunov solve, regime {i}"),
                residual: res,
                limit,
            });
        }
    }
    Ok(LyapunovSolution { p, condition })
}

/// Frobenius norm, per regime, of the Lyapunov equation's left side at `p`.
pub fn lyapunov_residual(p: &RegimeFamily, problem: &LyapunovProblem) -> Result<Vec<f64>> {
    let (m, n) = problem.dims();
    if p.len() != m || p.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "candidate solution has {} entries of {}x{}, expected {m} of {n}x{n}",
            p.len(),
            p.shape().0,
            p.shape().1
        )));
    }
    Ok((0..m)
        .map(|i| {
            let a = &problem.a[i];
            let c = &problem.c[i];
            let mut e = &p[i] * a + a.transpose() * &p[i] + c.transpose() * &p[i] * c
                + &problem.q[i]
                - &p[i] * problem.discount;
            for j in 0..m {
                e += &p[j] * problem.generator[(i, j)];
            }
            e.norm()
        })
        .collect())
}

/// Result of the Monte Carlo representation: per-entry sample mean of the
/// truncated path integrals, with the largest per-entry standard error.
#[derive(Debug, Clone)]
pub struct FkEstimate {
    pub estimate: DMatrix<f64>,
    pub standard_error: f64,
    pub paths: usize,
    pub horizon: f64,
    pub step: f64,
}

/// Truncation horizon after which the undiscounted tail is ~0.5% of the
/// total, assuming decay at the given positive margin.
pub fn suggested_horizon(margin: f64) -> f64 {
    (200.0f64).ln() / margin
}

/// Sample the probabilistic representation of the Lyapunov solution at one
/// regime: Euler–Maruyama on the matrix flow over a jump-refined grid,
/// left-endpoint quadrature of `e^{−rt} Φᵀ Q(α) Φ`, averaged over paths.
///
/// Path `p` draws from the RNG stream `(seed, p)`; output is bit-identical
/// regardless of how paths are scheduled.
pub fn feynman_kac_estimate(
    problem: &LyapunovProblem,
    regime: usize,
    paths: usize,
    horizon: f64,
    step: f64,
    seed: u64,
) -> Result<FkEstimate> {
    let (m, n) = problem.dims();
    if regime >= m {
        return Err(Error::RegimeIndex {
            index: regime,
            regimes: m,
        });
    }
    if !(horizon.is_finite() && horizon > 0.0) || !(step > 0.0 && step <= horizon) {
        return Err(Error::Config(format!(
            "need 0 < step <= horizon, got step {step}, horizon {horizon}"
        )));
    }
    if paths == 0 {
        return Err(Error::Config("paths must be at least 1".into()));
    }

    let integrals: Vec<DMatrix<f64>> = (0..paths)
        .into_par_iter()
        .map(|pid| -> Result<DMatrix<f64>> {
            let mut rng = path_rng(seed, pid as u64);
            let chain = sample_markov_path(&problem.generator, regime, horizon, &mut rng)?;
            let grid = refined_grid(horizon, step, &chain.jump_times);
            let mut phi = DMatrix::<f64>::identity(n, n);
            let mut qphi = DMatrix::<f64>::zeros(n, n);
            let mut dphi = DMatrix::<f64>::zeros(n, n);
            let mut acc = DMatrix::<f64>::zeros(n, n);
            use rand_distr::Distribution;
            for j in 0..grid.len() - 1 {
                let t = grid[j];
                let dt = grid[j + 1] - t;
                let i = chain.regime_at(t);
                let weight = (-problem.discount * t).exp() * dt;
                qphi.gemm(1.0, &problem.q[i], &phi, 0.0);
                acc.gemm_tr(weight, &phi, &qphi, 1.0);
                let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                let dw = z * dt.sqrt();
                dphi.gemm(dt, &problem.a[i], &phi, 0.0);
                dphi.gemm(dw, &problem.c[i], &phi, 1.0);
                phi += &dphi;
                if phi.iter().any(|v| !v.is_finite() || v.abs() > crate::simulate::BLOW_UP_LIMIT) {
                    return Err(Error::BlowUp {
                        path_id: pid,
                        time: grid[j + 1],
                        limit: crate::simulate::BLOW_UP_LIMIT,
                    });
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    // Sequential reduction in path order keeps the result scheduling-free.
    let mut mean = DMatrix::<f64>::zeros(n, n);
    for acc in &integrals {
        mean += acc;
    }
    mean /= paths as f64;
    let standard_error = if paths < 2 {
        0.0
    } else {
        let mut var = DMatrix::<f64>::zeros(n, n);
        for acc in &integrals {
            let d = acc - &mean;
            var += d.component_mul(&d);
        }
        var /= (paths - 1) as f64;
        var.iter()
            .fold(0.0f64, |a, &v| a.max((v / paths as f64).sqrt()))
    };
    let mean = (&mean + mean.transpose()) * 0.5;
    Ok(FkEstimate {
        estimate: mean,
        standard_error,
        paths,
        horizon,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_problem(a: f64, c: f64, q: f64, r: f64) -> LyapunovProblem {
        let one = |v: f64| RegimeFamily::new(vec![DMatrix::from_element(1, 1, v)]).unwrap();
        LyapunovProblem::new(one(a), one(c), one(q), DMatrix::zeros(1, 1), r).unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        // P = q / (r − 2a − c²) = 2 / (3 − 1 − 1) = 2.
        let sol = solve_coupled_lyapunov(&scalar_problem(0.5, 1.0, 2.0, 3.0)).unwrap();
        assert!((sol.p[0][(0, 0)] - 2.0).abs() < 1e-12, "P = {}", sol.p[0][(0, 0)]);
        assert!(sol.condition < 1e3);
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let model = crate::model::MfLqModel::reference_example();
        let prob = LyapunovProblem::new(
            model.a.clone(),
            model.c.clone(),
            RegimeFamily::zeros(4, 1, 1),
            model.generator().clone(),
            model.discount(),
        )
        .unwrap();
        let sol = solve_coupled_lyapunov(&prob).unwrap();
        for p in sol.p.iter() {
            assert_eq!(p[(0, 0)], 0.0);
        }
    }

    #[test]
    fn identical_regimes_reduce_to_single_regime_solution() {
        // With P(1) = P(2) the coupling term vanishes row-wise.
        let single = solve_coupled_lyapunov(&scalar_problem(-0.3, 0.4, 1.5, 2.0)).unwrap();
        let two = |v: f64| {
            RegimeFamily::new(vec![
                DMatrix::from_element(1, 1, v),
                DMatrix::from_element(1, 1, v),
            ])
            .unwrap()
        };
        let prob = LyapunovProblem::new(
            two(-0.3),
            two(0.4),
            two(1.5),
            dmatrix![-5.0, 5.0; 2.0, -2.0],
            2.0,
        )
        .unwrap();
        let sol = solve_coupled_lyapunov(&prob).unwrap();
        for p in sol.p.iter() {
            assert!((p[(0, 0)] - single.p[0][(0, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_of_perturbed_scalar_solution() {
        // Scalar example: P = 2 exact; at P = 2.1 the defect is
        // 0.1·(2·0.5 + 1 − 3) = −0.1, norm 0.1.
        let prob = scalar_problem(0.5, 1.0, 2.0, 3.0);
        let p = RegimeFamily::new(vec![DMatrix::from_element(1, 1, 2.1)]).unwrap();
        let res = lyapunov_residual(&p, &prob).unwrap();
        assert!((res[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn residual_at_zero_is_source_norm() {
        let model = crate::model::MfLqModel::reference_example();
        let prob = LyapunovProblem::new(
            model.a.clone(),
            model.c.clone(),
            model.q.clone(),
            model.generator().clone(),
            model.discount(),
        )
        .unwrap();
        let res = lyapunov_residual(&RegimeFamily::zeros(4, 1, 1), &prob).unwrap();
        for (i, r) in res.iter().enumerate() {
            assert!((r - prob.q[i].norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn matrix_case_residual_hits_target() {
        // A 2×2, two-regime instance with asymmetric A and a genuine C term.
        let a = RegimeFamily::new(vec![
            dmatrix![-1.0, 0.8; -0.3, -1.5],
            dmatrix![-2.0, 0.1; 0.4, -0.7],
        ])
        .unwrap();
        let c = RegimeFamily::new(vec![
            dmatrix![0.3, 0.1; 0.0, 0.2],
            dmatrix![0.1, -0.2; 0.3, 0.0],
        ])
        .unwrap();
        let q = RegimeFamily::new(vec![
            dmatrix![2.0, 0.5; 0.5, 1.0],
            dmatrix![1.0, -0.2; -0.2, 3.0],
        ])
        .unwrap();
        let prob =
            LyapunovProblem::new(a, c, q, dmatrix![-1.5, 1.5; 0.5, -0.5], 4.0).unwrap();
        let sol = solve_coupled_lyapunov(&prob).unwrap();
        let res = lyapunov_residual(&sol.p, &prob).unwrap();
        for (i, &r) in res.iter().enumerate() {
            assert!(r <= 1e-10 * (1.0 + prob.q[i].norm()), "regime {i}: {r:e}");
        }
        assert_eq!(sol.p.max_asymmetry(), 0.0);
        // Positive-semidefinite source keeps the solution PSD.
        assert!(sol.p.min_eigenvalue() > -1e-10);
    }

    #[test]
    fn monotone_in_source() {
        // Larger source, same flow: solution dominates entrywise in the PSD order.
        let model = crate::model::MfLqModel::reference_example();
        let base = LyapunovProblem::new(
            model.a.clone(),
            model.c.clone(),
            model.q.clone(),
            model.generator().clone(),
            model.discount(),
        )
        .unwrap();
        let bigger = LyapunovProblem::new(
            model.a.clone(),
            model.c.clone(),
            model.q.map(|_, m| m + DMatrix::from_element(1, 1, 0.5)).unwrap(),
            model.generator().clone(),
            model.discount(),
        )
        .unwrap();
        let p1 = solve_coupled_lyapunov(&base).unwrap().p;
        let p2 = solve_coupled_lyapunov(&bigger).unwrap().p;
        for i in 0..4 {
            assert!(p2[i][(0, 0)] - p1[i][(0, 0)] > -1e-9);
        }
    }

    #[test]
    fn singular_operator_is_reported() {
        // r = 2a with C = 0, single regime: operator 2a − r = 0 exactly.
        let err = solve_coupled_lyapunov(&LyapunovProblem {
            a: RegimeFamily::new(vec![DMatrix::from_element(1, 1, 1.0)]).unwrap(),
            c: RegimeFamily::zeros(1, 1, 1),
            q: RegimeFamily::new(vec![DMatrix::from_element(1, 1, 1.0)]).unwrap(),
            generator: DMatrix::zeros(1, 1),
            discount: 2.0,
        });
        assert!(matches!(
            err,
            Err(Error::SingularSystem { .. }) | Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn feynman_kac_matches_scalar_closed_form() {
        let prob = scalar_problem(0.5, 1.0, 2.0, 3.0);
        assert!(prob.growth_margin() > 0.0);
        let est = feynman_kac_estimate(&prob, 0, 4000, 6.0, 1e-3, 12345).unwrap();
        let err = (est.estimate[(0, 0)] - 2.0).abs();
        let budget = 3.0 * est.standard_error + 0.02 * 2.0;
        assert!(err < budget, "estimate {}, se {}", est.estimate[(0, 0)], est.standard_error);
    }

    #[test]
    fn feynman_kac_zero_source() {
        let mut prob = scalar_problem(0.5, 1.0, 2.0, 3.0);
        prob.q = RegimeFamily::zeros(1, 1, 1);
        let est = feynman_kac_estimate(&prob, 0, 100, 2.0, 1e-2, 1).unwrap();
        assert_eq!(est.estimate[(0, 0)], 0.0);
        assert_eq!(est.standard_error, 0.0);
    }

    #[test]
    fn feynman_kac_is_deterministic() {
        let prob = scalar_problem(0.2, 0.5, 1.0, 2.0);
        let a = feynman_kac_estimate(&prob, 0, 200, 3.0, 1e-2, 9).unwrap();
        let b = feynman_kac_estimate(&prob, 0, 200, 3.0, 1e-2, 9).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.standard_error, b.standard_error);
    }

    #[test]
    fn rejects_asymmetric_source() {
        let q = RegimeFamily::new(vec![dmatrix![1.0, 1e-6; 0.0, 1.0]]).unwrap();
        let a = RegimeFamily::zeros(1, 2, 2);
        let err = LyapunovProblem::new(a.clone(), a, q, DMatrix::zeros(1, 1), 1.0);
        assert!(matches!(err, Err(Error::AsymmetricWeight { .. })));
    }

    #[test]
    fn linearity_in_source() {
        let model = crate::model::MfLqModel::reference_example();
        let make = |q: RegimeFamily| {
            LyapunovProblem::new(
                model.a.clone(),
                model.c.clone(),
                q,
                model.generator().clone(),
                model.discount(),
            )
            .unwrap()
        };
        let q1 = model.q.clone();
        let q2 = model.q_hat.clone();
        let sum = q1.map(|i, m| m + &q2[i]).unwrap();
        let p1 = solve_coupled_lyapunov(&make(q1)).unwrap().p;
        let p2 = solve_coupled_lyapunov(&make(q2)).unwrap().p;
        let p12 = solve_coupled_lyapunov(&make(sum)).unwrap().p;
        for i in 0..4 {
            let lhs = p12[i][(0, 0)];
            let rhs = p1[i][(0, 0)] + p2[i][(0, 0)];
            assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
