//! IO side of the `cvxc` compiler: the conic benchmark file format, the
//! external-solver adapter protocol, the solve pipeline, the bundled grid
//! solver used as a test adapter, and report rendering for the CLI.

pub mod cbf;
pub mod gridsolve;
pub mod pipeline;
pub mod report;
pub mod solver;

pub use cbf::{build_cbf, read_cbf, render_cbf, write_cbf, CbfDocument, CbfError};
pub use pipeline::{solve, SolveResult};
pub use solver::{invoke_solver, parse_solution, SolveError, SolverConfig};
