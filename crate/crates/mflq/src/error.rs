//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while loading a model, solving the coupled
/// equations, or running Monte Carlo evaluation.
///
/// Variants split into two broad classes, which the CLI maps to exit codes:
/// *input errors* (bad file, bad schema, bad shapes, bad configuration) and
/// *numerical errors* (assumption failures, ill-conditioning, non-convergence,
/// trajectory blow-up, failed internal checks).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ---- input / schema ----
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("generator row {row} sums to {sum:e} (must vanish within 1e-12)")]
    GeneratorRowSum { row: usize, sum: f64 },

    #[error("generator entry ({row},{col}) = {value} violates sign structure (off-diagonals >= 0, diagonal <= 0)")]
    GeneratorSign { row: usize, col: usize, value: f64 },

    #[error("{name}[{index}] is asymmetric by {asymmetry:e} (limit {limit:e})")]
    AsymmetricWeight {
        name: &'static str,
        index: usize,
        asymmetry: f64,
        limit: f64,
    },

    #[error("regime index {index} out of range for {regimes} regimes")]
    RegimeIndex { index: usize, regimes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    // ---- numerical ----
    #[error("well-posedness check failed: {0}")]
    Assumptions(String),

    #[error("{context}: matrix is not positive definite (Cholesky failed)")]
    NotPositiveDefinite { context: String },

    #[error("stacked linear operator for {context} is ill-conditioned (estimate {estimate:.3e} exceeds 1e14)")]
    IllConditioned { context: String, estimate: f64 },

    #[error("singular stacked linear operator for {context}")]
    SingularSystem { context: String },

    #[error("{what} did not converge within {max_iter} iterations (residual {residual:e}, tolerance {tol:e})")]
    NoConvergence {
        what: &'static str,
        max_iter: usize,
        residual: f64,
        tol: f64,
    },

    #[error("internal residual check failed for {context}: {residual:e} exceeds {limit:e}")]
    ResidualCheck {
        context: String,
        residual: f64,
        limit: f64,
    },

    #[error("trajectory blow-up on path {path_id} at t = {time}: |X| exceeded {limit:e} or became non-finite")]
    BlowUp {
        path_id: usize,
        time: f64,
        limit: f64,
    },
}

impl Error {
    /// True for errors caused by bad input (files, schema, shapes, config),
    /// as opposed to numerical failures. Used by callers to pick exit codes.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Schema(_)
                | Error::Shape(_)
                | Error::NonFinite(_)
                | Error::GeneratorRowSum { .. }
                | Error::GeneratorSign { .. }
                | Error::AsymmetricWeight { .. }
                | Error::RegimeIndex { .. }
                | Error::Config(_)
        )
    }
}
