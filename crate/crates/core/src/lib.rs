//! Numerical toolkit for optimal exit-time control problems: value functions
//! on grids, extremal arcs, and regularity diagnostics of the value function.

pub mod arcs;
pub mod benchmarks;
pub mod error;
pub mod export;
pub mod expr;
pub mod grid;
pub mod hamiltonian;
pub mod problem;
pub mod regularity;
pub mod solver;
pub mod target;
pub mod vecops;

pub use error::{Error, Result};
pub use expr::Expr;
pub use grid::{build_grid, Grid, NodeStatus, ValueField, BIG};
pub use problem::{parse_problem, validate_hypotheses, ControlProblem};
pub use solver::{solve_value, SolveOptions, SweepMode};
