//! Sampled weight-space projection.
//!
//! Given a bank of recent candidate updates `D = [d_1 .. d_m]` and the safety
//! values `G = [g(theta + d_1) .. g(theta + d_m)]`, the projected step is
//! `D c*` where `c*` solves
//!
//! ```text
//! min_c   (c - e_m)^T S (c - e_m)
//! s.t.    (1 - 1^T c) g(theta) + G c + 1/2 (c^T S c + |c|^T diag(S)) L <= 0
//! ```
//!
//! with `S = D^T D` and `e_m` selecting the newest (raw gradient) column.
//! Only pointwise evaluations of `g` are used.

mod adaptive;
mod armijo;
mod bank;
mod problem;
mod smoothness;
mod solver;

pub use adaptive::{adaptive_project_and_verify, AdaptiveOutcome, AdaptiveSettings};
pub use armijo::{armijo_search, ArmijoOutcome, ArmijoSettings};
pub use bank::{BankEntry, GramData, UpdateBank};
pub use problem::{build_problem, ProjectionProblem};
pub use smoothness::{estimate_initial_l, SmoothnessVector};
pub use solver::{project, solve_projection, solve_projection_with, ProjectionResult, ProjectionStatus, QcqpSolution, SolverSettings};

/// Numeric slack on `g <= 0` used when verifying a safety evaluation.
pub const SAFETY_TOLERANCE: f64 = 1e-9;

pub(crate) fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
