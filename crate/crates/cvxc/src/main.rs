//! Command-line interface: check, canon, verify, solve.
//!
//! Exit codes are stable: 0 success/pass, 1 usage error, 2 parse or DCP
//! error, 3 verification failure, 4 verification inconclusive, 5 solver
//! error. Results go to stdout, diagnostics to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use cvxc::pipeline::{resolve_solver_command, solve};
use cvxc::report;
use cvxc::solver::SolveError;
use cvxc_core::atom::{AtomRegistry, Curvature};
use cvxc_core::canon::{canonicalize_full, AtomTree, Canonicalized, TreePayload};
use cvxc_core::expr::{Assignment, Problem};
use cvxc_core::obligations::check_atom_obligations;
use cvxc_core::parser::{parse_atom_decls, parse_problem};
use cvxc_core::printer::{print_expr, print_problem};
use cvxc_core::verify::{
    check_strong_equivalence, check_user_reduction, reduction_maps, EquivMode, EquivStatus,
    SampleConfig,
};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_VERIFY_FAIL: u8 = 3;
const EXIT_INCONCLUSIVE: u8 = 4;
const EXIT_SOLVER: u8 = 5;

#[derive(Parser)]
#[command(name = "cvxc", version, about = "disciplined convex programming compiler")]
struct Cli {
    /// RNG seed for sampling-based verification.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Tolerance for objective-gap equalities.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    /// Feasibility tolerance for cone membership.
    #[arg(long = "feas-tol", global = true, default_value_t = 1e-6)]
    feas_tol: f64,
    /// Output format: text or structured (JSON).
    #[arg(long, global = true, default_value = "text")]
    format: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a problem and check it against the DCP rules.
    Check {
        file: PathBuf,
        /// Print the role-annotated atom trees.
        #[arg(long)]
        explain: bool,
        #[arg(long = "atom-file")]
        atom_files: Vec<PathBuf>,
        /// Bind a parameter: NAME=VALUE.
        #[arg(long = "param")]
        params: Vec<String>,
    },
    /// Canonicalize to conic form.
    Canon {
        file: PathBuf,
        /// Print the reduced problem (always printed; kept for scripts).
        #[arg(long)]
        print: bool,
        /// Write the conic benchmark file here.
        #[arg(long)]
        cbf: Option<PathBuf>,
        /// Also print trees, provenance and eliminated conditions.
        #[arg(long)]
        explain: bool,
        #[arg(long = "atom-file")]
        atom_files: Vec<PathBuf>,
        #[arg(long = "param")]
        params: Vec<String>,
    },
    /// Check reductions and atom obligations numerically.
    Verify {
        /// Problem file: checks the compiler's own reduction for it.
        file: Option<PathBuf>,
        /// Check atom obligations instead (empty list = all atoms).
        #[arg(long, num_args = 0.., value_name = "NAME")]
        atoms: Option<Vec<String>>,
        /// Check a user reduction: P.cvx Q.cvx maps.txt.
        #[arg(long, num_args = 3, value_names = ["P", "Q", "MAPS"])]
        user: Option<Vec<PathBuf>>,
        /// Compare objective order instead of values (user reductions whose
        /// objectives differ by a strictly monotone transform).
        #[arg(long)]
        monotone: bool,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Sampling box per variable: VAR=LO:HI.
        #[arg(long = "box")]
        boxes: Vec<String>,
        #[arg(long = "atom-file")]
        atom_files: Vec<PathBuf>,
        #[arg(long = "param")]
        params: Vec<String>,
    },
    /// Canonicalize, emit CBF, run a solver adapter, and map the solution
    /// back.
    Solve {
        file: PathBuf,
        /// Adapter command with {input} and {output} placeholders;
        /// defaults to $CVXC_SOLVER_CMD, then the bundled grid solver.
        #[arg(long)]
        solver: Option<String>,
        /// Adapter timeout in seconds.
        #[arg(long, default_value_t = 60)]
        timeout: u64,
        /// Grid density for the bundled adapter.
        #[arg(long, default_value_t = 601)]
        grid: usize,
        /// Driver box per variable for the bundled adapter: VAR=LO:HI.
        #[arg(long = "box")]
        boxes: Vec<String>,
        #[arg(long = "atom-file")]
        atom_files: Vec<PathBuf>,
        #[arg(long = "param")]
        params: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(run(cli))
}

fn run(cli: Cli) -> u8 {
    match &cli.cmd {
        Cmd::Check {
            file,
            explain,
            atom_files,
            params,
        } => cmd_check(file, *explain, atom_files, params),
        Cmd::Canon {
            file,
            print,
            cbf,
            explain,
            atom_files,
            params,
        } => {
            let _ = print;
            cmd_canon(file, cbf.as_deref(), *explain, atom_files, params)
        }
        Cmd::Verify {
            file,
            atoms,
            user,
            monotone,
            samples,
            boxes,
            atom_files,
            params,
        } => cmd_verify(
            &cli,
            file.as_deref(),
            atoms.as_deref(),
            user.as_deref(),
            *monotone,
            *samples,
            boxes,
            atom_files,
            params,
        ),
        Cmd::Solve {
            file,
            solver,
            timeout,
            grid,
            boxes,
            atom_files,
            params,
        } => cmd_solve(
            &cli,
            file,
            solver.as_deref(),
            *timeout,
            *grid,
            boxes,
            atom_files,
            params,
        ),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> u8 {
    eprintln!("cvxc: {msg}");
    code
}

fn load_registry(atom_files: &[PathBuf]) -> Result<AtomRegistry, u8> {
    let mut reg = AtomRegistry::builtin();
    for f in atom_files {
        let text = std::fs::read_to_string(f)
            .map_err(|e| fail(EXIT_USAGE, format!("cannot read {}: {e}", f.display())))?;
        let decls = parse_atom_decls(&text, &reg).map_err(|e| fail(EXIT_PARSE, e))?;
        for d in decls {
            reg.register(d).map_err(|e| fail(EXIT_PARSE, e))?;
        }
    }
    Ok(reg)
}

fn parse_params(params: &[String]) -> Result<Assignment, u8> {
    let mut env = Assignment::new();
    for p in params {
        let (name, value) = p
            .split_once('=')
            .ok_or_else(|| fail(EXIT_USAGE, format!("--param `{p}` must be NAME=VALUE")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| fail(EXIT_USAGE, format!("bad parameter value `{value}`")))?;
        env.set_num(name, v);
    }
    Ok(env)
}

fn load_problem(file: &Path, reg: &AtomRegistry, params: &[String]) -> Result<Problem, u8> {
    let text = std::fs::read_to_string(file)
        .map_err(|e| fail(EXIT_USAGE, format!("cannot read {}: {e}", file.display())))?;
    let p = parse_problem(&text, reg).map_err(|e| fail(EXIT_PARSE, e))?;
    p.validate(reg).map_err(|e| fail(EXIT_PARSE, e))?;
    let env = parse_params(params)?;
    Ok(if env.is_empty() { p } else { p.bind_params(&env) })
}

fn parse_boxes(boxes: &[String]) -> Result<Vec<(String, (f64, f64))>, u8> {
    let mut out = Vec::new();
    for b in boxes {
        let err = || fail(EXIT_USAGE, format!("--box `{b}` must be VAR=LO:HI"));
        let (name, range) = b.split_once('=').ok_or_else(err)?;
        let (lo, hi) = range.split_once(':').ok_or_else(err)?;
        let lo: f64 = lo.parse().map_err(|_| err())?;
        let hi: f64 = hi.parse().map_err(|_| err())?;
        out.push((name.to_string(), (lo, hi)));
    }
    Ok(out)
}

fn role_label(t: &AtomTree, curvature: Option<Curvature>) -> String {
    match curvature {
        Some(c) if c != t.role => format!("{c}, in the role of {}", t.role),
        Some(c) => format!("{c}"),
        None => format!("role {}", t.role),
    }
}

fn print_tree(t: &AtomTree, reg: &AtomRegistry, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match &t.payload {
        TreePayload::Leaf => {
            out.push_str(&format!(
                "{pad}{}: leaf {}  [{}]\n",
                t.id,
                print_expr(&t.oexpr),
                role_label(t, None)
            ));
        }
        TreePayload::Node {
            atom,
            dim,
            children,
        } => {
            let curv = reg.resolve(atom, *dim).map(|d| d.curvature);
            out.push_str(&format!(
                "{pad}{}: {atom}  [{}]\n",
                t.id,
                role_label(t, curv)
            ));
            for c in children {
                print_tree(c, reg, indent + 1, out);
            }
        }
    }
}

fn explain_text(c: &Canonicalized, reg: &AtomRegistry) -> String {
    let mut s = String::new();
    s.push_str("atom trees:\n");
    print_tree(&c.objective_tree, reg, 1, &mut s);
    for (name, t) in &c.constraint_trees {
        match t {
            Some(t) => print_tree(t, reg, 1, &mut s),
            None => s.push_str(&format!("  {name}: (dropped)\n")),
        }
    }
    if !c.consumed.is_empty() {
        s.push_str(&format!(
            "eliminated conditions: {}\n",
            c.consumed.join(", ")
        ));
    }
    if !c.reduced.provenance.is_empty() {
        s.push_str("provenance:\n");
        for (name, p) in &c.reduced.provenance {
            match p {
                cvxc_core::canon::Provenance::Original(src) => {
                    s.push_str(&format!("  {name} <- constraint {src}\n"))
                }
                cvxc_core::canon::Provenance::AtomNode { path, atom } => {
                    s.push_str(&format!("  {name} <- graph of {atom} at {path}\n"))
                }
            }
        }
    }
    s
}

fn cmd_check(file: &Path, explain: bool, atom_files: &[PathBuf], params: &[String]) -> u8 {
    let reg = match load_registry(atom_files) {
        Ok(r) => r,
        Err(c) => return c,
    };
    let p = match load_problem(file, &reg, params) {
        Ok(p) => p,
        Err(c) => return c,
    };
    match canonicalize_full(&p, &reg) {
        Ok(c) => {
            println!("ok: {} is DCP", file.display());
            if explain {
                print!("{}", explain_text(&c, &reg));
            }
            EXIT_OK
        }
        Err(e) => fail(EXIT_PARSE, e),
    }
}

fn cmd_canon(
    file: &Path,
    cbf: Option<&Path>,
    explain: bool,
    atom_files: &[PathBuf],
    params: &[String],
) -> u8 {
    let reg = match load_registry(atom_files) {
        Ok(r) => r,
        Err(c) => return c,
    };
    let p = match load_problem(file, &reg, params) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let c = match canonicalize_full(&p, &reg) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    print!("{}", print_problem(&c.reduced.to_problem()));
    if explain {
        print!("{}", explain_text(&c, &reg));
    }
    if let Some(path) = cbf {
        let text = match cvxc::cbf::write_cbf(&c.reduced, &reg) {
            Ok(t) => t,
            Err(e) => return fail(EXIT_PARSE, e),
        };
        if let Err(e) = std::fs::write(path, text) {
            return fail(EXIT_USAGE, format!("cannot write {}: {e}", path.display()));
        }
    }
    EXIT_OK
}

fn equiv_exit(status: EquivStatus) -> u8 {
    match status {
        EquivStatus::Pass => EXIT_OK,
        EquivStatus::Fail => EXIT_VERIFY_FAIL,
        EquivStatus::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    cli: &Cli,
    file: Option<&Path>,
    atoms: Option<&[String]>,
    user: Option<&[PathBuf]>,
    monotone: bool,
    samples: usize,
    boxes: &[String],
    atom_files: &[PathBuf],
    params: &[String],
) -> u8 {
    let reg = match load_registry(atom_files) {
        Ok(r) => r,
        Err(c) => return c,
    };
    let mut cfg = SampleConfig::with_n_seed(samples, cli.seed);
    match parse_boxes(boxes) {
        Ok(bs) => {
            for (name, (lo, hi)) in bs {
                cfg.set_box(&name, lo, hi);
            }
        }
        Err(c) => return c,
    }
    let structured = cli.format == "structured";

    if let Some(names) = atoms {
        let names: Vec<String> = if names.is_empty() {
            reg.names().to_vec()
        } else {
            names.to_vec()
        };
        let mut worst = EXIT_OK;
        let mut reports = Vec::new();
        for name in &names {
            let dims: Vec<Option<usize>> = if reg.is_matrix_family(name) {
                vec![Some(1), Some(2), Some(3)]
            } else {
                vec![None]
            };
            for dim in dims {
                let decl = match reg.resolve(name, dim) {
                    Some(d) => d,
                    None => return fail(EXIT_USAGE, format!("unknown atom `{name}`")),
                };
                let tol = if name == "logdet" {
                    1e-5
                } else {
                    cli.tol.max(1e-9)
                };
                match check_atom_obligations(&decl, &cfg, tol, cli.feas_tol, &reg) {
                    Ok(r) => {
                        if !structured {
                            print!("{}", report::obligations_text(&r));
                        }
                        if !r.all_passed() {
                            worst =
                                worst.max(if r.exhausted && r.results.iter().all(|x| x.passed) {
                                    EXIT_INCONCLUSIVE
                                } else {
                                    EXIT_VERIFY_FAIL
                                });
                        }
                        reports.push(r);
                    }
                    Err(e) => {
                        eprintln!("cvxc: {e}");
                        worst = worst.max(EXIT_INCONCLUSIVE);
                    }
                }
            }
        }
        if structured {
            println!("{}", report::to_json(&reports));
        }
        return worst;
    }

    if let Some(files) = user {
        let read = |p: &PathBuf| {
            std::fs::read_to_string(p)
                .map_err(|e| fail(EXIT_USAGE, format!("cannot read {}: {e}", p.display())))
        };
        let p_text = match read(&files[0]) {
            Ok(t) => t,
            Err(c) => return c,
        };
        let q_text = match read(&files[1]) {
            Ok(t) => t,
            Err(c) => return c,
        };
        let maps_text = match read(&files[2]) {
            Ok(t) => t,
            Err(c) => return c,
        };
        return match check_user_reduction(
            &p_text,
            &q_text,
            &maps_text,
            &cfg,
            cli.tol,
            cli.feas_tol,
            monotone,
            &reg,
        ) {
            Ok(r) => {
                if structured {
                    println!("{}", report::to_json(&r));
                } else {
                    print!("{}", report::equiv_text(&r));
                }
                equiv_exit(r.status)
            }
            Err(e) => fail(EXIT_PARSE, e),
        };
    }

    let file = match file {
        Some(f) => f,
        None => return fail(EXIT_USAGE, "verify needs a FILE, --atoms, or --user"),
    };
    let p = match load_problem(file, &reg, params) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let (q, red) = match cvxc_core::canon::canonicalize(&p, &reg) {
        Ok(x) => x,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    let (fwd, bwd) = reduction_maps(&red);
    match check_strong_equivalence(
        &p,
        &q.to_problem(),
        &fwd,
        &bwd,
        &cfg,
        cli.tol,
        cli.feas_tol,
        EquivMode::Compiler,
        &reg,
    ) {
        Ok(r) => {
            if structured {
                println!("{}", report::to_json(&r));
            } else {
                print!("{}", report::equiv_text(&r));
            }
            equiv_exit(r.status)
        }
        Err(e) => fail(EXIT_PARSE, e),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    cli: &Cli,
    file: &Path,
    solver: Option<&str>,
    timeout: u64,
    grid: usize,
    boxes: &[String],
    atom_files: &[PathBuf],
    params: &[String],
) -> u8 {
    let reg = match load_registry(atom_files) {
        Ok(r) => r,
        Err(c) => return c,
    };
    let p = match load_problem(file, &reg, params) {
        Ok(p) => p,
        Err(c) => return c,
    };
    let boxes = match parse_boxes(boxes) {
        Ok(b) => b,
        Err(c) => return c,
    };
    // Canonicalize once up front so DCP failures exit 2, not 5, and so the
    // stub command can know the driver layout.
    let (q, _) = match cvxc_core::canon::canonicalize(&p, &reg) {
        Ok(x) => x,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    let cfg =
        match resolve_solver_command(solver, &q, grid, &boxes, Duration::from_secs(timeout)) {
            Ok(c) => c,
            Err(e) => return fail(EXIT_SOLVER, e),
        };
    match solve(&p, &cfg, &reg, cli.feas_tol) {
        Ok(r) => {
            if cli.format == "structured" {
                println!("{}", report::solve_json(&r));
            } else {
                print!("{}", report::solve_text(&r));
            }
            EXIT_OK
        }
        Err(e @ SolveError::Canon(_)) => fail(EXIT_PARSE, e),
        Err(e) => fail(EXIT_SOLVER, e),
    }
}
