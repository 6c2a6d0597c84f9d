//! Solver library for infinite-horizon discounted linear-quadratic control of
//! mean-field diffusions with Markov regime switching.
//!
//! The pipeline, end to end:
//!
//! 1. [`model`] — problem data (per-regime coefficients, weights, chain
//!    generator, discount) with structural validation and the two
//!    well-posedness checks.
//! 2. [`lyapunov`] — direct solver for the coupled algebraic Lyapunov system
//!    that the quasi-linearization iterates on, plus an independent
//!    Feynman–Kac Monte Carlo oracle for it.
//! 3. [`riccati`] — the two coupled algebraic Riccati systems (state and
//!    conditional-mean levels), solved by monotone quasi-linearization, and
//!    the feedback gains derived from them.
//! 4. [`simulate`] — chain sampling and Euler–Maruyama integration of the
//!    closed loop with exact jump-time handling on the grid.
//! 5. [`evaluate`] — Monte Carlo cost estimation and the consistency checks
//!    that tie simulation back to the solved value function.
//!
//! All regime indices are 0-based at this API; command-line and CSV surfaces
//! number regimes from 1.

pub mod error;
pub mod evaluate;
pub mod family;
pub mod lyapunov;
pub mod model;
pub mod riccati;
pub mod simulate;

pub use error::{Error, Result};
pub use evaluate::CostEstimate;
pub use family::RegimeFamily;
pub use model::{AssumptionReport, MfLqModel};
pub use riccati::{Are3Variant, AreSolution, GainSet, SolutionDoc, SolveOptions};
pub use simulate::SimConfig;
