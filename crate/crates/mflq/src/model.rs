//! Problem data: coefficients, weights, chain generator, and the
//! well-posedness checks.
//!
//! The controlled dynamics switch coefficients with a finite Markov chain
//! `α(t)` with generator `Λ` and react to the conditional mean of the state
//! given the chain's history:
//!
//! ```text
//! dX = [A(α)X + Â(α)X̂ + B(α)u] dt + [C(α)X + Ĉ(α)X̂ + D(α)u] dW,
//! X̂(t) = E[X(t) | chain history up to t],
//! J(x, i; u) = ½ E ∫₀^∞ e^{−rt} (⟨Q X, X⟩ + ⟨Q̂ X̂, X̂⟩ + ⟨R u, u⟩) dt.
//! ```
//!
//! Well-posedness is guaranteed by two checks:
//! * discount dominance: `rI − (A+Aᵀ+CᵀC) ≻ 0` and `rI − (A+Aᵀ+Â+Âᵀ) ≻ 0`
//!   per regime (the discount outruns state growth with and without the
//!   mean-field drift), and
//! * weight signs: `Q ⪰ 0`, `Q̂ ⪰ 0`, `R ≻ 0` per regime.
//!
//! [`check_assumptions`](MfLqModel::check_assumptions) reports the eigenvalue
//! margins of both; solvers require the first to hold for their convergence
//! guarantees. The Brownian motion is one-dimensional.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{matrix_from_rows, matrix_to_rows, RegimeFamily};

/// Inputs asymmetric beyond this are rejected as data errors.
pub const WEIGHT_ASYMMETRY_LIMIT: f64 = 1e-8;
/// Generator rows must sum to zero within this.
pub const GENERATOR_ROW_SUM_TOL: f64 = 1e-12;

/// Check chain-generator structure: square, finite, off-diagonals ≥ 0,
/// diagonal ≤ 0, rows summing to zero within 1e-12.
pub(crate) fn validate_generator(generator: &DMatrix<f64>) -> Result<()> {
    let regimes = generator.nrows();
    if regimes == 0 || generator.ncols() != regimes {
        return Err(Error::Shape(format!(
            "generator must be square and nonempty, got {}x{}",
            generator.nrows(),
            generator.ncols()
        )));
    }
    if generator.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generator".into()));
    }
    for i in 0..regimes {
        for j in 0..regimes {
            let v = generator[(i, j)];
            if (i == j && v > 0.0) || (i != j && v < 0.0) {
                return Err(Error::GeneratorSign {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        let sum: f64 = generator.row(i).iter().sum();
        if sum.abs() > GENERATOR_ROW_SUM_TOL {
            return Err(Error::GeneratorRowSum { row: i, sum });
        }
    }
    Ok(())
}

/// Full problem data for one control problem.
///
/// Shapes: `generator` is `M×M`; `a, a_hat, c, c_hat, q, q_hat` are `n×n`
/// per regime; `b, d` are `n×k`; `r_ctrl` is `k×k`. The weights `q, q_hat,
/// r_ctrl` are stored exactly symmetric (symmetrized on construction).
/// Regime indices are 0-based throughout the library.
#[derive(Debug, Clone, PartialEq)]
pub struct MfLqModel {
    n: usize,
    k: usize,
    regimes: usize,
    discount: f64,
    generator: DMatrix<f64>,
    pub a: RegimeFamily,
    pub a_hat: RegimeFamily,
    pub b: RegimeFamily,
    pub c: RegimeFamily,
    pub c_hat: RegimeFamily,
    pub d: RegimeFamily,
    pub q: RegimeFamily,
    pub q_hat: RegimeFamily,
    pub r_ctrl: RegimeFamily,
}

/// Eigenvalue margins of the two well-posedness assumptions.
///
/// `margin1[i]` is the smallest eigenvalue of `rI − (A+Aᵀ+CᵀC)` in regime
/// `i`; `margin2[i]` that of `rI − (A+Aᵀ+Â+Âᵀ)`. Positive margins mean the
/// discount dominates state growth. The weight minima feed the sign checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub margin1: Vec<f64>,
    pub margin2: Vec<f64>,
    pub q_min_eig: Vec<f64>,
    pub q_hat_min_eig: Vec<f64>,
    pub r_min_eig: Vec<f64>,
    pub pass_growth: bool,
    pub pass_weights: bool,
}

impl AssumptionReport {
    /// Both checks pass.
    pub fn pass(&self) -> bool {
        self.pass_growth && self.pass_weights
    }

    /// Smallest growth margin across regimes and both conditions.
    pub fn min_margin(&self) -> f64 {
        self.margin1
            .iter()
            .chain(self.margin2.iter())
            .fold(f64::INFINITY, |acc, &v| acc.min(v))
    }
}

impl MfLqModel {
    /// Assemble and validate a model from its parts.
    ///
    /// Checks dimensions, generator structure (off-diagonals ≥ 0, diagonal
    /// ≤ 0, zero row sums within 1e-12), finiteness, a positive discount,
    /// and weight symmetry: asymmetry beyond 1e-8 is rejected, below that
    /// the weights are symmetrized in place.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        discount: f64,
        generator: DMatrix<f64>,
        a: RegimeFamily,
        a_hat: RegimeFamily,
        b: RegimeFamily,
        c: RegimeFamily,
        c_hat: RegimeFamily,
        d: RegimeFamily,
        q: RegimeFamily,
        q_hat: RegimeFamily,
        r_ctrl: RegimeFamily,
    ) -> Result<Self> {
        if !discount.is_finite() {
            return Err(Error::NonFinite("discount rate".into()));
        }
        if discount <= 0.0 {
            return Err(Error::Config(format!(
                "discount rate must be positive, got {discount}"
            )));
        }
        let regimes = generator.nrows();
        if regimes == 0 || generator.ncols() != regimes {
            return Err(Error::Shape(format!(
                "generator must be square and nonempty, got {}x{}",
                generator.nrows(),
                generator.ncols()
            )));
        }
        validate_generator(&generator)?;

        let n = a.shape().0;
        let k = b.shape().1;
        let expect = |fam: &RegimeFamily, name: &str, rows: usize, cols: usize| -> Result<()> {
            if fam.len() != regimes {
                return Err(Error::Shape(format!(
                    "{name} has {} entries, expected {regimes}",
                    fam.len()
                )));
            }
            if fam.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "{name} entries are {}x{}, expected {rows}x{cols}",
                    fam.shape().0,
                    fam.shape().1
                )));
            }
            Ok(())
        };
        expect(&a, "A", n, n)?;
        expect(&a_hat, "Ahat", n, n)?;
        expect(&b, "B", n, k)?;
        expect(&c, "C", n, n)?;
        expect(&c_hat, "Chat", n, n)?;
        expect(&d, "D", n, k)?;
        expect(&q, "Q", n, n)?;
        expect(&q_hat, "Qhat", n, n)?;
        expect(&r_ctrl, "R", k, k)?;

        let check_weight = |fam: &RegimeFamily, name: &'static str| -> Result<RegimeFamily> {
            for (i, m) in fam.iter().enumerate() {
                let asym = (m - m.transpose())
                    .iter()
                    .fold(0.0f64, |acc, v| acc.max(v.abs()));
                if asym > WEIGHT_ASYMMETRY_LIMIT {
                    return Err(Error::AsymmetricWeight {
                        name,
                        index: i,
                        asymmetry: asym,
                        limit: WEIGHT_ASYMMETRY_LIMIT,
                    });
                }
            }
            Ok(fam.symmetrized())
        };
        let q = check_weight(&q, "Q")?;
        let q_hat = check_weight(&q_hat, "Qhat")?;
        let r_ctrl = check_weight(&r_ctrl, "R")?;

        Ok(Self {
            n,
            k,
            regimes,
            discount,
            generator,
            a,
            a_hat,
            b,
            c,
            c_hat,
            d,
            q,
            q_hat,
            r_ctrl,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.k
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// `A(i) + Â(i)`, the drift of the conditional mean.
    pub fn a_tilde(&self) -> RegimeFamily {
        self.a
            .map(|i, m| m + &self.a_hat[i])
            .expect("shape-preserving")
    }

    /// `C(i) + Ĉ(i)`.
    pub fn c_tilde(&self) -> RegimeFamily {
        self.c
            .map(|i, m| m + &self.c_hat[i])
            .expect("shape-preserving")
    }

    /// `Q(i) + Q̂(i)`, the state weight seen by the conditional mean.
    pub fn q_tilde(&self) -> RegimeFamily {
        self.q
            .map(|i, m| m + &self.q_hat[i])
            .expect("shape-preserving")
    }

    /// Eigenvalue margins for the discount-dominance and weight-sign checks.
    ///
    /// Margins are eigenvalues of explicitly symmetrized matrices, so a
    /// floating-point asymmetry cannot flip a verdict.
    pub fn check_assumptions(&self) -> AssumptionReport {
        let r = self.discount;
        let eye = DMatrix::identity(self.n, self.n);
        let mut margin1 = Vec::with_capacity(self.regimes);
        let mut margin2 = Vec::with_capacity(self.regimes);
        for i in 0..self.regimes {
            let a = &self.a[i];
            let c = &self.c[i];
            let growth1 = &eye * r - (a + a.transpose() + c.transpose() * c);
            margin1.push(crate::family::min_symmetric_eigenvalue(&growth1));
            let ah = &self.a_hat[i];
            let growth2 = &eye * r - (a + a.transpose() + ah + ah.transpose());
            margin2.push(crate::family::min_symmetric_eigenvalue(&growth2));
        }
        let q_min_eig: Vec<f64> = self
            .q
            .iter()
            .map(crate::family::min_symmetric_eigenvalue)
            .collect();
        let q_hat_min_eig: Vec<f64> = self
            .q_hat
            .iter()
            .map(crate::family::min_symmetric_eigenvalue)
            .collect();
        let r_min_eig: Vec<f64> = self
            .r_ctrl
            .iter()
            .map(crate::family::min_symmetric_eigenvalue)
            .collect();
        let pass_growth = margin1
            .iter()
            .chain(margin2.iter())
            .all(|&m| m > 0.0);
        let pass_weights = q_min_eig.iter().all(|&v| v >= -1e-12)
            && q_hat_min_eig.iter().all(|&v| v >= -1e-12)
            && r_min_eig.iter().all(|&v| v > 0.0);
        AssumptionReport {
            margin1,
            margin2,
            q_min_eig,
            q_hat_min_eig,
            r_min_eig,
            pass_growth,
            pass_weights,
        }
    }

    /// The built-in four-regime scalar reference instance.
    ///
    /// Two "calm" regimes (1-based regimes 1 and 2: unstable drift `A = 1`,
    /// no mean-field drift) and two "reactive" regimes (regimes 3 and 4:
    /// stable drift `A = −1`, mean-field drift `Â = 1`), with the chain
    /// jumping at rates 2 within each group and 1 across groups, discount
    /// `r = 3`. This is the instance whose published solution the
    /// `reproduce` command re-derives.
    pub fn reference_example() -> MfLqModel {
        let scalars = |vals: [f64; 4]| {
            RegimeFamily::from_fn(4, |i| DMatrix::from_element(1, 1, vals[i]))
                .expect("static shapes")
        };
        #[rustfmt::skip]
        let generator = DMatrix::from_row_slice(4, 4, &[
            -3.0,  2.0,  1.0,  0.0,
             2.0, -3.0,  0.0,  1.0,
             1.0,  0.0, -3.0,  2.0,
             0.0,  1.0,  2.0, -3.0,
        ]);
        MfLqModel::new(
            3.0,
            generator,
            scalars([1.0, 1.0, -1.0, -1.0]),        // A
            scalars([0.0, 0.0, 1.0, 1.0]),          // Ahat
            scalars([1.0, 1.5, 2.0, 2.5]),          // B
            scalars([0.5, 0.5, 0.5, 0.5]),          // C
            scalars([0.2, 0.5, 0.2, 0.5]),          // Chat
            scalars([0.4, 0.6, 0.4, 0.6]),          // D
            scalars([1.0, 0.5, 1.0, 0.5]),          // Q
            scalars([1.0, 2.0, 2.0, 1.0]),          // Qhat
            scalars([0.5, 0.5, 0.5, 0.5]),          // R
        )
        .expect("reference instance is valid")
    }

    // ---- serialization ----

    /// Parse a model from its JSON document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: ModelDoc =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        doc.into_model()
    }

    /// Load a model from a JSON file.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Serialize to the JSON document format (pretty-printed).
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelDoc::from_model(self))
            .expect("model serialization cannot fail")
    }

    /// Scale `x` by the generator row of regime `i`: helper for tests and
    /// diagnostics; returns `Σ_j λ_ij x_j`.
    pub fn generator_mix(&self, i: usize, x: &DVector<f64>) -> f64 {
        (0..self.regimes).map(|j| self.generator[(i, j)] * x[j]).sum()
    }
}

/// On-disk document mirror: matrices as lists of rows.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    n: usize,
    k: usize,
    #[serde(rename = "M")]
    m: usize,
    r: f64,
    generator: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Ahat")]
    a_hat: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    b: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    c: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Chat")]
    c_hat: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "D")]
    d: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Qhat")]
    q_hat: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    r_ctrl: Vec<Vec<Vec<f64>>>,
}

impl ModelDoc {
    fn into_model(self) -> Result<MfLqModel> {
        let family = |raw: &[Vec<Vec<f64>>], name: &str, rows: usize, cols: usize| -> Result<RegimeFamily> {
            if raw.len() != self.m {
                return Err(Error::Shape(format!(
                    "{name} has {} entries, expected M = {}",
                    raw.len(),
                    self.m
                )));
            }
            let entries = raw
                .iter()
                .enumerate()
                .map(|(i, rows_i)| {
                    let m = matrix_from_rows(rows_i, &format!("{name}[{i}]"))?;
                    if m.nrows() != rows || m.ncols() != cols {
                        return Err(Error::Shape(format!(
                            "{name}[{i}] is {}x{}, expected {rows}x{cols}",
                            m.nrows(),
                            m.ncols()
                        )));
                    }
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            RegimeFamily::new(entries)
        };
        if self.n == 0 || self.k == 0 || self.m == 0 {
            return Err(Error::Schema("n, k, M must all be positive".into()));
        }
        let generator = matrix_from_rows(&self.generator, "generator")?;
        if generator.nrows() != self.m || generator.ncols() != self.m {
            return Err(Error::Shape(format!(
                "generator is {}x{}, expected M x M = {}x{}",
                generator.nrows(),
                generator.ncols(),
                self.m,
                self.m
            )));
        }
        let (n, k) = (self.n, self.k);
        MfLqModel::new(
            self.r,
            generator,
            family(&self.a, "A", n, n)?,
            family(&self.a_hat, "Ahat", n, n)?,
            family(&self.b, "B", n, k)?,
            family(&self.c, "C", n, n)?,
            family(&self.c_hat, "Chat", n, n)?,
            family(&self.d, "D", n, k)?,
            family(&self.q, "Q", n, n)?,
            family(&self.q_hat, "Qhat", n, n)?,
            family(&self.r_ctrl, "R", k, k)?,
        )
    }

    fn from_model(model: &MfLqModel) -> Self {
        let fam = |f: &RegimeFamily| f.iter().map(matrix_to_rows).collect();
        ModelDoc {
            n: model.n,
            k: model.k,
            m: model.regimes,
            r: model.discount,
            generator: matrix_to_rows(&model.generator),
            a: fam(&model.a),
            a_hat: fam(&model.a_hat),
            b: fam(&model.b),
            c: fam(&model.c),
            c_hat: fam(&model.c_hat),
            d: fam(&model.d),
            q: fam(&model.q),
            q_hat: fam(&model.q_hat),
            r_ctrl: fam(&model.r_ctrl),
        }
    }
}
