//! Pretty printer for problems and expressions.
//!
//! `parse_problem(print_problem(p))` is structurally the identity for every
//! problem the parser can construct; the printer is also the
//! canonical form used for golden files and determinism checks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::expr::{Expr, Problem, Sense, Shape, VarDecl};

// Precedence levels: relations 0, additive 1, multiplicative 2, unary 3,
// power 4, application 5, primaries 6.

fn prec_of(e: &Expr) -> u8 {
    match e {
        Expr::Const(v) => {
            if *v < 0.0 {
                3
            } else {
                6
            }
        }
        Expr::Var(_) | Expr::Param(_) => 6,
        Expr::Apply(f, args) => match f.as_str() {
            "eq" | "le" | "lt" => 0,
            "add" | "sub" => 1,
            "smul" | "mul" | "div" => 2,
            "neg" => 3,
            "square" | "pow" => 4,
            "vec" => 6,
            "entry" if is_entry_postfix(args) => 6,
            _ => {
                if args.is_empty() {
                    6
                } else {
                    5
                }
            }
        },
    }
}

fn is_entry_postfix(args: &[Expr]) -> bool {
    args.len() == 3
        && matches!(args[0], Expr::Var(_) | Expr::Param(_))
        && matches!(args[1], Expr::Const(v) if v >= 0.0 && crate::num::is_int(v))
        && matches!(args[2], Expr::Const(v) if v >= 0.0 && crate::num::is_int(v))
}

fn write_expr(e: &Expr, min_prec: u8, out: &mut String) {
    let p = prec_of(e);
    let needs_parens = p < min_prec;
    if needs_parens {
        out.push('(');
    }
    match e {
        Expr::Const(v) => out.push_str(&format!("{v}")),
        Expr::Var(n) | Expr::Param(n) => out.push_str(n),
        Expr::Apply(f, args) => match f.as_str() {
            "eq" => infix(out, &args[0], " = ", &args[1], 1),
            "le" => infix(out, &args[0], " <= ", &args[1], 1),
            "lt" => infix(out, &args[0], " < ", &args[1], 1),
            "add" => {
                write_expr(&args[0], 1, out);
                out.push_str(" + ");
                write_expr(&args[1], 2, out);
            }
            "sub" => {
                write_expr(&args[0], 1, out);
                out.push_str(" - ");
                write_expr(&args[1], 2, out);
            }
            "smul" | "mul" => {
                write_expr(&args[0], 2, out);
                out.push_str(" * ");
                write_expr(&args[1], 3, out);
            }
            "div" => {
                write_expr(&args[0], 2, out);
                out.push_str(" / ");
                write_expr(&args[1], 3, out);
            }
            "neg" => {
                out.push('-');
                write_expr(&args[0], 3, out);
            }
            "square" => {
                write_expr(&args[0], 5, out);
                out.push_str("^2");
            }
            "pow" => {
                write_expr(&args[0], 5, out);
                out.push_str(" ^ ");
                write_expr(&args[1], 3, out);
            }
            "vec" => {
                out.push_str("![");
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_expr(a, 1, out);
                }
                out.push(']');
            }
            "entry" if is_entry_postfix(args) => {
                write_expr(&args[0], 6, out);
                let i = match args[1] {
                    Expr::Const(v) => v as usize,
                    _ => unreachable!(),
                };
                let j = match args[2] {
                    Expr::Const(v) => v as usize,
                    _ => unreachable!(),
                };
                out.push_str(&format!("[{i},{j}]"));
            }
            name => {
                out.push_str(name);
                for a in args {
                    out.push(' ');
                    write_expr(a, 6, out);
                }
            }
        },
    }
    if needs_parens {
        out.push(')');
    }
}

fn infix(out: &mut String, l: &Expr, op: &str, r: &Expr, child_prec: u8) {
    write_expr(l, child_prec, out);
    out.push_str(op);
    write_expr(r, child_prec, out);
}

/// Render an expression.
pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(e, 0, &mut s);
    s
}

fn write_decl_groups(decls: &[(String, Shape)], out: &mut String) {
    let mut i = 0;
    let mut first = true;
    while i < decls.len() {
        if !first {
            out.push(' ');
        }
        first = false;
        match decls[i].1 {
            Shape::Scalar => {
                out.push('(');
                let mut j = i;
                while j < decls.len() && decls[j].1 == Shape::Scalar {
                    if j > i {
                        out.push(' ');
                    }
                    out.push_str(&decls[j].0);
                    j += 1;
                }
                out.push_str(" : R)");
                i = j;
            }
            Shape::SymMatrix(n) => {
                out.push_str(&format!("({} : matrix {n})", decls[i].0));
                i += 1;
            }
        }
    }
}

/// Render a problem in the DSL.
pub fn print_problem(p: &Problem) -> String {
    let mut out = String::new();
    if !p.params.is_empty() {
        out.push_str("parameters ");
        let decls: Vec<(String, Shape)> = p
            .params
            .iter()
            .map(|d| (d.name.clone(), d.shape))
            .collect();
        write_decl_groups(&decls, &mut out);
        out.push('\n');
    }
    if !p.assumptions.is_empty() {
        out.push_str("assuming\n");
        for a in &p.assumptions {
            out.push_str(&format!("  {} : {}\n", a.name, print_expr(&a.body)));
        }
    }
    out.push_str("optimization ");
    let decls: Vec<(String, Shape)> = p.vars.iter().map(|d| (d.name.clone(), d.shape)).collect();
    write_decl_groups(&decls, &mut out);
    out.push('\n');
    let sense = match p.sense {
        Sense::Minimize => "minimize",
        Sense::Maximize => "maximize",
    };
    out.push_str(&format!("  {sense} {}\n", print_expr(&p.objective)));
    if !p.constraints.is_empty() {
        out.push_str("  subject to\n");
        for c in &p.constraints {
            out.push_str(&format!("    {} : {}\n", c.name, print_expr(&c.body)));
        }
    }
    out
}

/// Group declarations for printing.
pub fn decl_groups_of(vars: &[VarDecl]) -> Vec<(String, Shape)> {
    vars.iter().map(|d| (d.name.clone(), d.shape)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::AtomRegistry;
    use crate::parser::parse_problem;

    #[test]
    fn roundtrip_worked_example() {
        let reg = AtomRegistry::builtin();
        let src = "optimization (x y : R)
  maximize sqrt (x - y)
  subject to
    c1 : y = 2*x - 3
    c2 : x^2 <= 2
    c3 : 0 <= x - y
";
        let p = parse_problem(src, &reg).unwrap();
        let printed = print_problem(&p);
        let p2 = parse_problem(&printed, &reg).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn empty_constraints_print_without_subject_to() {
        let reg = AtomRegistry::builtin();
        let p = parse_problem("optimization (x : R) minimize x", &reg).unwrap();
        let printed = print_problem(&p);
        assert!(!printed.contains("subject to"));
        assert_eq!(parse_problem(&printed, &reg).unwrap(), p);
    }

    #[test]
    fn precedence_prints_minimal_parens() {
        let reg = AtomRegistry::builtin();
        let p = parse_problem(
            "optimization (x y : R) minimize 2*x - 3 - y subject to c : 0 <= x",
            &reg,
        )
        .unwrap();
        assert_eq!(print_expr(&p.objective), "2 * x - 3 - y");
    }

    #[test]
    fn application_args_are_parenthesized() {
        let reg = AtomRegistry::builtin();
        let p = parse_problem("optimization (x y : R) minimize -sqrt (x - y)", &reg).unwrap();
        assert_eq!(print_expr(&p.objective), "-sqrt (x - y)");
    }
}
