//! Canonical MILP form, a deterministic embedded solver, and MPS file I/O.
//!
//! The embedded solver is branch and bound over a bounded-variable primal
//! simplex: best-first node order, most-fractional branching, lowest-index
//! tie-breaks, no randomness. It is intended for desk-scale instances; full
//! feeder windows go to an external solver through the MPS escape hatch.

mod bb;
mod instance;
mod mps;
mod simplex;

pub use bb::{solve, Solution, SolveOptions, Status, INT_TOL};
pub use instance::{Census, Instance, Row, RowId, Sense, VarId, VarKind, Variable};
pub use mps::{
    import_solution, parse_mps, read_mps, to_mps_string, write_mps, write_solution, DEFAULT_UPPER,
};
pub use simplex::{solve_lp, LpSolution, LpStatus};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("numerical trouble: {0}")]
    Numerical(String),
    #[error("column {0} has a descent direction with no blocking bound (unbounded relaxation)")]
    UnboundedDirection(usize),
    #[error("variable {0} has empty bounds after fixing")]
    EmptyBounds(usize),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("name mapping mismatch: {0}")]
    NameMismatch(String),
}
