//! Bundled solver adapter: grid search over driver variables with
//! cone-derived epigraph variables. Speaks the adapter protocol: reads a
//! CBF file, writes a solution file.

use clap::Parser;
use cvxc::gridsolve::{grid_solve, render_solution, GridSolveConfig};

#[derive(Parser)]
#[command(name = "cvxc-gridsolve", about = "grid-search adapter for CBF problems")]
struct Args {
    /// Grid points per driver dimension.
    #[arg(long, default_value_t = 601)]
    grid: usize,
    /// Number of leading variables to grid; the rest are derived from the
    /// cone rows. 0 means all variables.
    #[arg(long, default_value_t = 0)]
    drivers: usize,
    /// Box per driver coordinate as `lo:hi`, repeatable, in order.
    #[arg(long = "box", allow_hyphen_values = true)]
    boxes: Vec<String>,
    /// Feasibility tolerance for non-equality cones.
    #[arg(long, default_value_t = 1e-6)]
    feas_tol: f64,
    /// Input CBF file.
    input: std::path::PathBuf,
    /// Output solution file.
    output: std::path::PathBuf,
}

fn parse_box(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("box `{s}` must be lo:hi"))?;
    let lo: f64 = lo.parse().map_err(|_| format!("bad box bound `{lo}`"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad box bound `{hi}`"))?;
    if lo >= hi {
        return Err(format!("empty box `{s}`"));
    }
    Ok((lo, hi))
}

fn main() {
    let args = Args::parse();
    let run = || -> Result<String, String> {
        let text = std::fs::read_to_string(&args.input)
            .map_err(|e| format!("cannot read {}: {e}", args.input.display()))?;
        let doc = cvxc::cbf::read_cbf(&text).map_err(|e| e.to_string())?;
        let boxes = args
            .boxes
            .iter()
            .map(|s| parse_box(s))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = GridSolveConfig {
            grid: args.grid,
            drivers: if args.drivers == 0 && !boxes.is_empty() {
                boxes.len()
            } else {
                args.drivers
            },
            boxes,
            feas_tol: args.feas_tol,
        };
        let outcome = grid_solve(&doc, &cfg)?;
        Ok(render_solution(&outcome))
    };
    match run() {
        Ok(solution) => {
            if let Err(e) = std::fs::write(&args.output, solution) {
                eprintln!("cvxc-gridsolve: cannot write {}: {e}", args.output.display());
                std::process::exit(2);
            }
        }
        Err(e) => {
            eprintln!("cvxc-gridsolve: {e}");
            std::process::exit(3);
        }
    }
}
