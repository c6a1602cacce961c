//! Core of the `cvxc` convex-programming compiler.
//!
//! This crate is `no_std` (alloc only) and contains everything that does not
//! touch the file system or spawn processes:
//!
//! - [`expr`]: expression trees, problems, assignments;
//! - [`eval`]: numeric evaluation of expressions;
//! - [`affine`]: affine-form extraction over the optimization variables;
//! - [`atom`]: the atom registry (curvature, monotonicities, conditions,
//!   graph implementations, solutions);
//! - [`parser`] / [`printer`]: the problem DSL;
//! - [`canon`]: DCP tree construction, reduction to conic form, and the
//!   executable forward/backward equivalence witness;
//! - [`obligations`]: sample-based checking of the four per-atom properties;
//! - [`verify`]: feasible-point samplers, the strong-equivalence checker and
//!   the brute-force grid oracle.
//!
//! The companion `cvxc` crate adds the conic benchmark file format, the
//! external-solver adapter protocol and the command-line interface.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod affine;
pub mod atom;
pub mod canon;
pub mod eval;
pub mod expr;
pub mod linalg;
pub mod num;
pub mod obligations;
pub mod parser;
pub mod printer;
pub mod verify;

pub use atom::{AtomDecl, AtomRegistry, ConeKind, Curvature, Monotonicity};
pub use canon::{canonicalize, AtomTree, CanonError, ReducedProblem, Reduction, Role};
pub use eval::{eval, EvalCtx, EvalError, Value};
pub use expr::{
    normalize_sense, Assignment, Binding, Constraint, Expr, ParamDecl, Problem, Sense, Shape,
    VarDecl,
};
pub use parser::{parse_problem, ParseError, SourceSpan};
pub use printer::{print_expr, print_problem};
pub use verify::{
    brute_force_optimum, check_strong_equivalence, check_user_reduction, sample_feasible,
    EquivReport, SampleConfig,
};

/// Default feasibility tolerance for cone and constraint membership.
pub const DEFAULT_FEAS_TOL: f64 = 1e-6;

/// Default tolerance for equality comparisons in equivalence checks.
pub const DEFAULT_EQ_TOL: f64 = 1e-8;
