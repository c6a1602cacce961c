//! The bundled test adapter: a grid solver for conic problems.
//!
//! The first `drivers` scalar variables are enumerated over a grid; every
//! remaining variable is derived from the cone rows, using the objective
//! direction to pick the binding bound. This reproduces, numerically, the
//! defining property of graph implementations: at a fixed assignment of
//! the driver variables the optimal epigraph variables sit on their cone
//! boundaries. Problems with semidefinite blocks are not supported.
//!
//! Equality rows are enforced within the grid resolution (an off-grid
//! equality could otherwise never be met); all other cones use the
//! feasibility tolerance.

use crate::cbf::{CbfDocument, ConeCode};

#[derive(Debug, Clone)]
pub struct GridSolveConfig {
    pub grid: usize,
    pub drivers: usize,
    /// Box per driver coordinate, in order; missing entries use (-10, 10).
    pub boxes: Vec<(f64, f64)>,
    pub feas_tol: f64,
}

impl Default for GridSolveConfig {
    fn default() -> Self {
        GridSolveConfig {
            grid: 601,
            drivers: 0,
            boxes: Vec::new(),
            feas_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridOutcome {
    Solved { values: Vec<f64>, objective: f64 },
    Infeasible,
}

#[derive(Debug, Clone)]
struct Row {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Row {
    fn value(&self, values: &[f64]) -> f64 {
        let mut s = self.constant;
        for (v, c) in &self.terms {
            s += c * values[*v];
        }
        s
    }

    fn sole_unknown(&self, known: &[bool]) -> Option<(usize, f64)> {
        let mut found = None;
        for (v, c) in &self.terms {
            if !known[*v] && *c != 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some((*v, *c));
            }
        }
        found
    }

    /// Value of the row with the sole unknown's contribution removed.
    fn partial_value(&self, values: &[f64], skip: usize) -> f64 {
        let mut s = self.constant;
        for (v, c) in &self.terms {
            if *v != skip {
                s += c * values[*v];
            }
        }
        s
    }
}

struct Conic {
    nvars: usize,
    rows: Vec<Row>,
    blocks: Vec<(ConeCode, Vec<usize>)>,
    obj: Row,
}

fn compile(doc: &CbfDocument) -> Result<Conic, String> {
    if !doc.psd_con_dims.is_empty() || !doc.psd_var_dims.is_empty() {
        return Err("unsupported cone PSDCON".to_string());
    }
    let nrows = doc.nrows();
    let mut rows: Vec<Row> = (0..nrows)
        .map(|_| Row {
            terms: Vec::new(),
            constant: 0.0,
        })
        .collect();
    for (r, v, c) in &doc.a_coords {
        if *r >= nrows {
            return Err("ACOORD row out of range".to_string());
        }
        rows[*r].terms.push((*v, *c));
    }
    for (r, c) in &doc.b_coords {
        if *r >= nrows {
            return Err("BCOORD row out of range".to_string());
        }
        rows[*r].constant = *c;
    }
    let mut blocks = Vec::new();
    let mut next = 0usize;
    for (code, size) in &doc.con_blocks {
        blocks.push((*code, (next..next + size).collect()));
        next += size;
    }
    let obj = Row {
        terms: doc.obj_coords.clone(),
        constant: doc.obj_const,
    };
    Ok(Conic {
        nvars: doc.nvars(),
        rows,
        blocks,
        obj,
    })
}

/// One-sided bound on a derived variable.
#[derive(Debug, Clone, Copy)]
enum Bound {
    Lower(f64),
    Upper(f64),
}

/// Translate a bound on the affine row value `c*z + r` into a bound on z.
fn row_bound(c: f64, r: f64, lower: Option<f64>, upper: Option<f64>, out: &mut Vec<Bound>) {
    if let Some(l) = lower {
        let b = (l - r) / c;
        out.push(if c > 0.0 { Bound::Lower(b) } else { Bound::Upper(b) });
    }
    if let Some(u) = upper {
        let b = (u - r) / c;
        out.push(if c > 0.0 { Bound::Upper(b) } else { Bound::Lower(b) });
    }
}

fn block_bounds(
    code: ConeCode,
    rows: &[&Row],
    var: usize,
    values: &[f64],
    known: &[bool],
    out: &mut Vec<Bound>,
) {
    // The variable must appear in exactly one row of the block and every
    // other row must be fully determined.
    let mut var_row = None;
    for (i, r) in rows.iter().enumerate() {
        let has = r.terms.iter().any(|(v, c)| *v == var && *c != 0.0);
        let others_unknown = r
            .terms
            .iter()
            .any(|(v, c)| *v != var && !known[*v] && *c != 0.0);
        if others_unknown {
            return;
        }
        if has {
            if var_row.is_some() {
                return;
            }
            var_row = Some(i);
        }
    }
    let i = match var_row {
        Some(i) => i,
        None => return,
    };
    let coef = rows[i]
        .terms
        .iter()
        .find(|(v, _)| *v == var)
        .map(|(_, c)| *c)
        .unwrap();
    let base = rows[i].partial_value(values, var);
    match code {
        ConeCode::Zero => row_bound(coef, base, Some(0.0), Some(0.0), out),
        ConeCode::Nonneg => row_bound(coef, base, Some(0.0), None, out),
        ConeCode::Quad => {
            if i == 0 {
                // t >= ||x||.
                let mut sq = 0.0;
                for r in &rows[1..] {
                    let x = r.value(values);
                    sq += x * x;
                }
                row_bound(coef, base, Some(sq.sqrt()), None, out);
            } else {
                let t = rows[0].value(values);
                let mut rest = 0.0;
                for (j, r) in rows.iter().enumerate().skip(1) {
                    if j != i {
                        let x = r.value(values);
                        rest += x * x;
                    }
                }
                let s = t * t - rest;
                if t >= 0.0 && s >= 0.0 {
                    let m = s.sqrt();
                    row_bound(coef, base, Some(-m), Some(m), out);
                }
            }
        }
        ConeCode::RotatedQuad => {
            let sq_tail = |skip: Option<usize>| -> f64 {
                let mut s = 0.0;
                for (j, r) in rows.iter().enumerate().skip(2) {
                    if Some(j) != skip {
                        let x = r.value(values);
                        s += x * x;
                    }
                }
                s
            };
            if i == 0 || i == 1 {
                let other = rows[1 - i].value(values);
                // 2 v w >= ||x||^2 and v, w >= 0.
                let mut lo: f64 = 0.0;
                if other > 0.0 {
                    lo = lo.max(sq_tail(None) / (2.0 * other));
                    row_bound(coef, base, Some(lo), None, out);
                } else {
                    row_bound(coef, base, Some(0.0), None, out);
                }
            } else {
                let v = rows[0].value(values);
                let w = rows[1].value(values);
                let s = 2.0 * v * w - sq_tail(Some(i));
                if v >= 0.0 && w >= 0.0 && s >= 0.0 {
                    let m = s.sqrt();
                    row_bound(coef, base, Some(-m), Some(m), out);
                }
            }
        }
        ConeCode::Exp => {
            // Rows are (a, b, c) with b exp(a/b) <= c.
            match i {
                2 => {
                    let a = rows[0].value(values);
                    let b = rows[1].value(values);
                    if b > 0.0 {
                        let l = b * (a / b).exp();
                        if l.is_finite() {
                            row_bound(coef, base, Some(l), None, out);
                        }
                    }
                }
                0 => {
                    let b = rows[1].value(values);
                    let c = rows[2].value(values);
                    if b > 0.0 && c > 0.0 {
                        let u = b * (c / b).ln();
                        if u.is_finite() {
                            row_bound(coef, base, None, Some(u), out);
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

fn block_violation(code: ConeCode, rows: &[&Row], values: &[f64]) -> f64 {
    match code {
        ConeCode::Zero => rows[0].value(values).abs(),
        ConeCode::Nonneg => (-rows[0].value(values)).max(0.0),
        ConeCode::Quad => {
            let t = rows[0].value(values);
            let mut sq = 0.0;
            for r in &rows[1..] {
                let x = r.value(values);
                sq += x * x;
            }
            (sq.sqrt() - t).max(0.0)
        }
        ConeCode::RotatedQuad => {
            let v = rows[0].value(values);
            let w = rows[1].value(values);
            let mut sq = 0.0;
            for r in &rows[2..] {
                let x = r.value(values);
                sq += x * x;
            }
            (sq - 2.0 * v * w).max(0.0).max((-v).max(0.0)).max((-w).max(0.0))
        }
        ConeCode::Exp => {
            let a = rows[0].value(values);
            let b = rows[1].value(values);
            let c = rows[2].value(values);
            if b <= 0.0 {
                return f64::INFINITY;
            }
            let lhs = b * (a / b).exp();
            if !lhs.is_finite() {
                return f64::INFINITY;
            }
            (lhs - c).max(0.0)
        }
    }
}

/// Derive the non-driver variables at a fixed driver assignment. Returns
/// false when some variable cannot be determined.
fn derive(conic: &Conic, values: &mut [f64], known: &mut [bool]) -> bool {
    let blocks: Vec<(ConeCode, Vec<&Row>)> = conic
        .blocks
        .iter()
        .map(|(code, idx)| (*code, idx.iter().map(|i| &conic.rows[*i]).collect()))
        .collect();
    loop {
        if known.iter().all(|k| *k) {
            return true;
        }
        let mut progressed = false;
        // Exact elimination from equality rows first.
        for (code, rows) in &blocks {
            if *code != ConeCode::Zero {
                continue;
            }
            if let Some((v, c)) = rows[0].sole_unknown(known) {
                let base = rows[0].partial_value(values, v);
                values[v] = -base / c;
                known[v] = true;
                progressed = true;
            }
        }
        if progressed {
            continue;
        }
        // Otherwise fix the first variable with derivable bounds, choosing
        // the bound that optimizes the (minimization) objective.
        'vars: for v in 0..conic.nvars {
            if known[v] {
                continue;
            }
            let mut bounds = Vec::new();
            for (code, rows) in &blocks {
                block_bounds(*code, rows, v, values, known, &mut bounds);
            }
            if bounds.is_empty() {
                continue 'vars;
            }
            let mut lo: Option<f64> = None;
            let mut hi: Option<f64> = None;
            for b in &bounds {
                match b {
                    Bound::Lower(x) => lo = Some(lo.map_or(*x, |l: f64| l.max(*x))),
                    Bound::Upper(x) => hi = Some(hi.map_or(*x, |h: f64| h.min(*x))),
                }
            }
            let c_obj = conic
                .obj
                .terms
                .iter()
                .find(|(i, _)| *i == v)
                .map(|(_, c)| *c)
                .unwrap_or(0.0);
            let pick = if c_obj > 0.0 {
                lo.or(hi)
            } else if c_obj < 0.0 {
                hi.or(lo)
            } else {
                lo.or(hi)
            };
            values[v] = match pick {
                Some(x) => x,
                None => continue 'vars,
            };
            known[v] = true;
            progressed = true;
            break;
        }
        if !progressed {
            return false;
        }
    }
}

/// Exhaustive grid search over the driver variables with cone-derived
/// epigraph variables.
pub fn grid_solve(doc: &CbfDocument, cfg: &GridSolveConfig) -> Result<GridOutcome, String> {
    let conic = compile(doc)?;
    let d = if cfg.drivers == 0 {
        conic.nvars
    } else {
        cfg.drivers.min(conic.nvars)
    };
    // Clamp the grid so the total stays within budget.
    let mut g = cfg.grid.max(2);
    while (g as u128).pow(d as u32) > 100_000_000 && g > 3 {
        g = g / 2 + 1;
    }
    let mut grids: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut max_step = 0.0_f64;
    for j in 0..d {
        let (lo, hi) = cfg.boxes.get(j).copied().unwrap_or((-10.0, 10.0));
        let step = (hi - lo) / ((g - 1) as f64);
        max_step = max_step.max(step);
        grids.push((0..g).map(|k| lo + step * (k as f64)).collect());
    }
    let eq_tol = cfg.feas_tol.max(max_step);

    let blocks: Vec<(ConeCode, Vec<&Row>)> = conic
        .blocks
        .iter()
        .map(|(code, idx)| (*code, idx.iter().map(|i| &conic.rows[*i]).collect()))
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0usize; d];
    let total = (g as u64).pow(d as u32);
    let mut values = vec![0.0f64; conic.nvars];
    let mut known = vec![false; conic.nvars];
    for step in 0..total {
        if step > 0 {
            let mut j = d - 1;
            loop {
                idx[j] += 1;
                if idx[j] < g {
                    break;
                }
                idx[j] = 0;
                if j == 0 {
                    break;
                }
                j -= 1;
            }
        }
        for k in known.iter_mut() {
            *k = false;
        }
        for j in 0..d {
            values[j] = grids[j][idx[j]];
            known[j] = true;
        }
        for v in values[d..].iter_mut() {
            *v = 0.0;
        }
        if !derive(&conic, &mut values, &mut known) {
            continue;
        }
        let mut ok = true;
        for (code, rows) in &blocks {
            let tol = if *code == ConeCode::Zero {
                eq_tol
            } else {
                cfg.feas_tol
            };
            if block_violation(*code, rows, &values) > tol {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let obj = conic.obj.value(&values);
        if !obj.is_finite() {
            continue;
        }
        let better = best.as_ref().map_or(true, |(b, _)| obj < *b);
        if better {
            best = Some((obj, values.clone()));
        }
    }
    Ok(match best {
        Some((objective, values)) => GridOutcome::Solved { values, objective },
        None => GridOutcome::Infeasible,
    })
}

/// Render the adapter solution file.
pub fn render_solution(outcome: &GridOutcome) -> String {
    match outcome {
        GridOutcome::Solved { values, .. } => {
            let mut s = String::from("STATUS PRIMAL_AND_DUAL_FEASIBLE\n");
            for (i, v) in values.iter().enumerate() {
                s.push_str(&format!("VAR {i} {v}\n"));
            }
            s
        }
        GridOutcome::Infeasible => String::from("STATUS INFEASIBLE\n"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbf::build_cbf;
    use cvxc_core::atom::AtomRegistry;
    use cvxc_core::canon::canonicalize;
    use cvxc_core::parser::parse_problem;

    fn solve_text(src: &str, cfg: &GridSolveConfig) -> GridOutcome {
        let reg = AtomRegistry::builtin();
        let p = parse_problem(src, &reg).unwrap();
        let (q, _) = canonicalize(&p, &reg).unwrap();
        let doc = build_cbf(&q, &reg).unwrap();
        grid_solve(&doc, cfg).unwrap()
    }

    #[test]
    fn linear_problem() {
        let out = solve_text(
            "optimization (x : R) minimize x subject to c : posOrthCone x",
            &GridSolveConfig {
                grid: 2001,
                drivers: 1,
                boxes: vec![(-1.0, 1.0)],
                feas_tol: 1e-6,
            },
        );
        match out {
            GridOutcome::Solved { objective, .. } => assert!(objective.abs() < 1e-9),
            _ => panic!("expected a solution"),
        }
    }

    #[test]
    fn exp_objective_derives_epigraph() {
        let out = solve_text(
            "optimization (x : R) minimize exp x subject to c : 1 <= x",
            &GridSolveConfig {
                grid: 2001,
                drivers: 1,
                boxes: vec![(-1.0, 3.0)],
                feas_tol: 1e-6,
            },
        );
        match out {
            GridOutcome::Solved { objective, values } => {
                assert!((objective - std::f64::consts::E).abs() < 1e-2);
                assert!((values[0] - 1.0).abs() < 2.1e-3);
            }
            _ => panic!("expected a solution"),
        }
    }

    #[test]
    fn so1_matches_reported_numbers() {
        let out = solve_text(
            "optimization (x y : R)
  maximize sqrt (x - y)
  subject to
    c1 : y = 2*x - 3
    c2 : x^2 <= 2
    c3 : 0 <= x - y
",
            &GridSolveConfig {
                grid: 2001,
                drivers: 2,
                boxes: vec![(-2.0, 2.0), (-6.0, 0.0)],
                feas_tol: 1e-6,
            },
        );
        match out {
            GridOutcome::Solved { objective, values } => {
                // Objective of the reduced problem is -t.0.
                assert!(
                    (objective + 2.101003).abs() < 2e-3,
                    "objective {objective}"
                );
                assert!((values[0] + 1.414214).abs() < 3e-3, "x = {}", values[0]);
                assert!((values[1] + 5.828427).abs() < 3e-3, "y = {}", values[1]);
            }
            _ => panic!("expected a solution"),
        }
    }

    #[test]
    fn infeasible_problem_reports_infeasible() {
        let out = solve_text(
            "optimization (x : R) minimize x subject to a : x <= -1 b : 1 <= x",
            &GridSolveConfig {
                grid: 101,
                drivers: 1,
                boxes: vec![(-3.0, 3.0)],
                feas_tol: 1e-6,
            },
        );
        assert_eq!(out, GridOutcome::Infeasible);
    }

    #[test]
    fn psd_blocks_are_rejected() {
        let reg = AtomRegistry::builtin();
        let p = parse_problem(
            "optimization (S : matrix 2)
  maximize logdet S - S[0,0] - S[1,1]
  subject to
    c : posdef S
",
            &reg,
        )
        .unwrap();
        let (q, _) = canonicalize(&p, &reg).unwrap();
        let doc = build_cbf(&q, &reg).unwrap();
        assert!(grid_solve(&doc, &GridSolveConfig::default())
            .unwrap_err()
            .contains("PSDCON"));
    }
}
