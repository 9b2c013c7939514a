//! Primal-dual interior-point solver for sparse, nonconvex nonlinear programs.
//!
//! Inequality rows get slack variables; steps come from inertia-corrected
//! sparse LDLᵀ factorizations of the reduced KKT system with the exact
//! Lagrangian Hessian. Step lengths obey the fraction-to-boundary rule and a
//! filter line search with second-order corrections, falling back to an ℓ1
//! merit function when the filter stalls. [`solve_multistart`] runs the local
//! solver from seeded random points and keeps the best feasible result.

mod ipm;
pub mod ldl;
mod model;
mod multistart;
mod problem;

use std::path::PathBuf;

pub use ipm::solve_single;
pub use model::{ProductPenalty, QuadExpr, QuadraticModel};
pub use multistart::{sample_start, solve_multistart, solve_multistart_with};
pub use problem::NlpProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    OptimalLocal,
    FeasibleSuboptimal,
    Infeasible,
    IterationLimit,
}

impl Status {
    pub fn is_feasible(self) -> bool {
        !matches!(self, Status::Infeasible)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::OptimalLocal => "optimal-local",
            Status::FeasibleSuboptimal => "feasible-suboptimal",
            Status::Infeasible => "infeasible",
            Status::IterationLimit => "iteration-limit",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Scaled KKT error at which a point is declared locally optimal.
    pub tolerance: f64,
    /// Absolute constraint violation regarded as feasible.
    pub feasibility_tolerance: f64,
    pub acceptable_tolerance: f64,
    pub acceptable_iterations: usize,
    pub max_iterations: usize,
    pub initial_barrier: f64,
    /// Number of random starts used by the multistart driver.
    pub starts: usize,
    pub seed: u64,
    /// When set, a per-iteration CSV log is written here by [`solve_single`].
    pub log_path: Option<PathBuf>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tolerance: 1e-6,
            feasibility_tolerance: 1e-6,
            acceptable_tolerance: 1e-4,
            acceptable_iterations: 10,
            max_iterations: 500,
            initial_barrier: 0.1,
            starts: 15,
            seed: 0,
            log_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: Status,
    /// Largest absolute bound or constraint violation at `x`.
    pub violation: f64,
    pub iterations: usize,
    /// Constraint multipliers in the sign convention `∇f + Jᵀλ = z`.
    pub multipliers: Vec<f64>,
}

impl Solution {
    /// Orders candidate solutions: feasible before infeasible, then by
    /// objective (feasible) or violation (infeasible).
    pub fn better_than(&self, other: &Solution) -> bool {
        match (self.status.is_feasible(), other.status.is_feasible()) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.objective < other.objective,
            (false, false) => self.violation < other.violation,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NlpError {
    #[error("problem callback returned a non-finite {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no starting points requested")]
    NoStarts,
    #[error("failed to write iteration log: {0}")]
    Log(#[from] std::io::Error),
}
