//! Rendering of verification reports and solve results.
//!
//! Two formats: a line-oriented text form and a machine-readable JSON
//! form (`--format structured`). Field names are stable.

use cvxc_core::expr::{Assignment, Binding};
use cvxc_core::obligations::ObligationReport;
use cvxc_core::verify::{EquivMode, EquivReport, EquivStatus};
use serde::Serialize;

use crate::pipeline::SolveResult;

pub fn assignment_lines(a: &Assignment, indent: &str) -> String {
    let mut s = String::new();
    for (name, b) in a.iter() {
        match b {
            Binding::Num(v) => s.push_str(&format!("{indent}{name} = {v}\n")),
            Binding::Mat(m) => {
                let n = m.dim();
                let rows: Vec<String> = (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| format!("{}", m.at(i, j)))
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect();
                s.push_str(&format!("{indent}{name} = [{}]\n", rows.join("; ")));
            }
        }
    }
    s
}

pub fn equiv_text(r: &EquivReport) -> String {
    let mut s = String::new();
    let status = match r.status {
        EquivStatus::Pass => "PASS",
        EquivStatus::Fail => "FAIL",
        EquivStatus::Inconclusive => "INCONCLUSIVE",
    };
    let mode = match r.mode {
        EquivMode::Strong => "strong",
        EquivMode::Compiler => "compiler",
        EquivMode::Monotone => "monotone",
    };
    s.push_str(&format!("equivalence: {status}\n"));
    s.push_str(&format!("mode: {mode}\n"));
    for (dir, d) in [("forward", &r.forward), ("backward", &r.backward)] {
        s.push_str(&format!(
            "{dir}: samples={} infeasible={} max-violation={:e} max-gap={:e}",
            d.samples, d.feasibility_violations, d.max_feasibility_violation, d.max_objective_gap
        ));
        if r.mode == EquivMode::Monotone {
            s.push_str(&format!(" order-disagreements={}", d.order_disagreements));
        }
        s.push('\n');
    }
    if let Some(id) = r.roundtrip_identity {
        s.push_str(&format!("roundtrip-identity: {id}\n"));
    }
    for n in &r.notes {
        s.push_str(&format!("note: {n}\n"));
    }
    for (dir, d) in [("forward", &r.forward), ("backward", &r.backward)] {
        if let Some(w) = &d.witness {
            s.push_str(&format!("{dir} witness: {}\n", w.detail));
            s.push_str(&assignment_lines(&w.point, "  "));
        }
    }
    s
}

pub fn obligations_text(r: &ObligationReport) -> String {
    let mut s = String::new();
    let verdict = if r.all_passed() { "PASS" } else { "FAIL" };
    let dim = r.dim.map(|n| format!(" (n={n})")).unwrap_or_default();
    s.push_str(&format!("atom {}{dim}: {verdict}\n", r.atom));
    for res in &r.results {
        s.push_str(&format!(
            "  {}: {} samples={} worst={:e}\n",
            res.name,
            if res.passed { "pass" } else { "FAIL" },
            res.samples,
            res.worst_violation
        ));
        if let Some(w) = &res.witness {
            s.push_str(&format!("    witness violation={:e}\n", w.violation));
            for (n, v) in &w.args {
                s.push_str(&format!("    arg {n} = {v:?}\n"));
            }
            for (n, v) in &w.impl_vars {
                s.push_str(&format!("    impl {n} = {v:?}\n"));
            }
            for (n, v) in &w.perturbed {
                s.push_str(&format!("    perturbed {n} = {v:?}\n"));
            }
        }
    }
    if r.exhausted {
        s.push_str("  sampler exhausted: results are partial\n");
    }
    s
}

#[derive(Serialize)]
struct SolveJson<'a> {
    status: &'a str,
    value: Option<f64>,
    reduced_value: Option<f64>,
    solution: Option<&'a Assignment>,
    reduced_solution: Option<&'a Assignment>,
    residual_original: Option<f64>,
    residual_reduced: Option<f64>,
}

pub fn solve_text(r: &SolveResult) -> String {
    let mut s = String::new();
    s.push_str(&format!("status: {}\n", r.status));
    if let Some(v) = r.value {
        s.push_str(&format!("value: {v}\n"));
    }
    if let Some(a) = &r.original_assignment {
        s.push_str("solution:\n");
        s.push_str(&assignment_lines(a, "  "));
    }
    if let (Some(ro), Some(rr)) = (r.residual_original, r.residual_reduced) {
        s.push_str(&format!("residual-original: {ro:e}\n"));
        s.push_str(&format!("residual-reduced: {rr:e}\n"));
    }
    s
}

pub fn solve_json(r: &SolveResult) -> String {
    let j = SolveJson {
        status: &r.status,
        value: r.value,
        reduced_value: r.reduced_value,
        solution: r.original_assignment.as_ref(),
        reduced_solution: r.reduced_assignment.as_ref(),
        residual_original: r.residual_original,
        residual_reduced: r.residual_reduced,
    };
    serde_json::to_string_pretty(&j).unwrap_or_else(|_| "{}".to_string())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_else(|_| "{}".to_string())
}
