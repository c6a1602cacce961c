//! The solve pipeline: canonicalize, emit CBF, run the solver adapter,
//! parse the solution, and map it back through the reduction.

use std::path::PathBuf;
use std::time::Duration;

use cvxc_core::atom::AtomRegistry;
use cvxc_core::canon::{canonicalize, ReducedProblem, Reduction};
use cvxc_core::eval::{constraint_violation, eval, EvalCtx, Value};
use cvxc_core::expr::{Assignment, Problem, Shape};

use crate::cbf::{build_cbf, render_cbf};
use crate::solver::{invoke_solver, parse_solution, solution_assignment, SolveError, SolverConfig};

/// Outcome of a solve: the solver's verbatim status plus, when it returned
/// a point, the mapped solutions and residuals on both problems.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: String,
    pub reduced: ReducedProblem,
    pub reduction: Reduction,
    pub reduced_assignment: Option<Assignment>,
    pub original_assignment: Option<Assignment>,
    /// Objective value of the original problem at the returned point,
    /// under the original sense.
    pub value: Option<f64>,
    pub reduced_value: Option<f64>,
    pub residual_original: Option<f64>,
    pub residual_reduced: Option<f64>,
}

/// Environment variable consulted for the adapter command.
pub const SOLVER_CMD_ENV: &str = "CVXC_SOLVER_CMD";
/// Environment variable overriding the temp directory.
pub const TMPDIR_ENV: &str = "CVXC_TMPDIR";

fn temp_dir() -> PathBuf {
    std::env::var_os(TMPDIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

/// Locate the bundled grid-solver adapter next to the current executable.
pub fn bundled_adapter() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?;
    let name = if cfg!(windows) {
        "cvxc-gridsolve.exe"
    } else {
        "cvxc-gridsolve"
    };
    let candidate = dir.join(name);
    candidate.exists().then_some(candidate)
}

/// Build the default stub-adapter command for a problem: grid over the
/// original variables' coordinates, deriving the fresh ones.
pub fn stub_command(
    adapter: &std::path::Path,
    q: &ReducedProblem,
    grid: usize,
    boxes: &[(String, (f64, f64))],
) -> String {
    let mut drivers = 0usize;
    let mut box_flags = String::new();
    for v in &q.original_vars {
        let b = boxes
            .iter()
            .find(|(n, _)| n == &v.name)
            .map(|(_, b)| *b)
            .unwrap_or((-10.0, 10.0));
        let coords = match v.shape {
            Shape::Scalar => 1,
            Shape::SymMatrix(n) => n * (n + 1) / 2,
        };
        for _ in 0..coords {
            box_flags.push_str(&format!(" --box {}:{}", b.0, b.1));
        }
        drivers += coords;
    }
    format!(
        "{} --grid {grid} --drivers {drivers}{box_flags} {{input}} {{output}}",
        adapter.display()
    )
}

/// Run the full pipeline on a problem with bound parameters.
pub fn solve(
    p: &Problem,
    cfg: &SolverConfig,
    registry: &AtomRegistry,
    feas_tol: f64,
) -> Result<SolveResult, SolveError> {
    let (reduced, reduction) = canonicalize(p, registry).map_err(SolveError::Canon)?;
    let doc = build_cbf(&reduced, registry).map_err(SolveError::Cbf)?;
    let text = render_cbf(&doc);

    let dir = tempfile::Builder::new()
        .prefix("cvxc-")
        .tempdir_in(temp_dir())?;
    let cbf_path = dir.path().join("problem.cbf");
    let sol_path = dir.path().join("solution.sol");
    std::fs::write(&cbf_path, &text)?;

    let raw_text = invoke_solver(&cbf_path, &sol_path, cfg)?;
    let raw = parse_solution(&raw_text)?;

    let mut result = SolveResult {
        status: raw.status.clone(),
        reduced: reduced.clone(),
        reduction: reduction.clone(),
        reduced_assignment: None,
        original_assignment: None,
        value: None,
        reduced_value: None,
        residual_original: None,
        residual_reduced: None,
    };
    // An infeasible or ill-posed status stops the pipeline.
    if raw.values.is_empty() {
        return Ok(result);
    }
    let reduced_assignment = solution_assignment(&doc, &reduced, &raw)?;
    let original_assignment = reduction.backward_apply(&reduced_assignment);

    let ctx = EvalCtx::with_tol(registry, feas_tol);
    let value = match eval(&p.objective, &original_assignment, &ctx) {
        Ok(Value::Num(v)) => Some(v),
        _ => None,
    };
    let reduced_value = match eval(&reduced.objective, &reduced_assignment, &ctx) {
        Ok(Value::Num(v)) => Some(v),
        _ => None,
    };
    let mut worst_orig: f64 = 0.0;
    for c in &p.constraints {
        match constraint_violation(&c.body, &original_assignment, &ctx) {
            Ok(v) => worst_orig = worst_orig.max(v),
            Err(_) => worst_orig = f64::INFINITY,
        }
    }
    let mut worst_red: f64 = 0.0;
    let qp = reduced.to_problem();
    for c in &qp.constraints {
        match constraint_violation(&c.body, &reduced_assignment, &ctx) {
            Ok(v) => worst_red = worst_red.max(v),
            Err(_) => worst_red = f64::INFINITY,
        }
    }
    result.reduced_assignment = Some(reduced_assignment);
    result.original_assignment = Some(original_assignment);
    result.value = value;
    result.reduced_value = reduced_value;
    result.residual_original = Some(worst_orig);
    result.residual_reduced = Some(worst_red);
    Ok(result)
}

/// Resolve the solver command: explicit flag, then environment, then the
/// bundled grid solver.
pub fn resolve_solver_command(
    explicit: Option<&str>,
    q: &ReducedProblem,
    grid: usize,
    boxes: &[(String, (f64, f64))],
    timeout: Duration,
) -> Result<SolverConfig, SolveError> {
    if let Some(cmd) = explicit {
        return Ok(SolverConfig {
            command: cmd.to_string(),
            timeout,
        });
    }
    if let Ok(cmd) = std::env::var(SOLVER_CMD_ENV) {
        if !cmd.trim().is_empty() {
            return Ok(SolverConfig {
                command: cmd,
                timeout,
            });
        }
    }
    match bundled_adapter() {
        Some(path) => Ok(SolverConfig {
            command: stub_command(&path, q, grid, boxes),
            timeout,
        }),
        None => Err(SolveError::SolverNotFound {
            command: "cvxc-gridsolve (bundled adapter)".to_string(),
        }),
    }
}
