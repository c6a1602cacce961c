//! Numeric evaluation of expressions.
//!
//! Evaluation is deterministic: identical (expression, assignment) pairs
//! give bit-identical results. Domain violations (log of a non-positive
//! value, overflow, singular matrices) are reported as errors rather than
//! silently producing NaN, with the path of the offending subexpression.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::Serialize;

use crate::atom::AtomRegistry;
use crate::expr::{Assignment, Binding, Expr};
use crate::linalg::{self, Mat};
use crate::num;

/// Result of evaluating an expression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Value {
    Num(f64),
    Vector(Vec<f64>),
    Mat(Mat),
    Bool(bool),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

/// Evaluation context: the registry supplies interpretations of user atoms,
/// `feas_tol` is the feasibility tolerance for cone and relational roots.
pub struct EvalCtx<'a> {
    pub registry: &'a AtomRegistry,
    pub feas_tol: f64,
}

impl<'a> EvalCtx<'a> {
    pub fn new(registry: &'a AtomRegistry) -> Self {
        EvalCtx {
            registry,
            feas_tol: crate::DEFAULT_FEAS_TOL,
        }
    }

    pub fn with_tol(registry: &'a AtomRegistry, feas_tol: f64) -> Self {
        EvalCtx { registry, feas_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EvalError {
    UnknownName { name: String, path: String },
    UnknownAtom { name: String, path: String },
    DomainError { what: String, path: String },
    ShapeMismatch { what: String, path: String },
}

impl core::fmt::Display for EvalError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EvalError::UnknownName { name, path } => {
                write!(f, "unknown name `{name}` at {path}")
            }
            EvalError::UnknownAtom { name, path } => {
                write!(f, "no numeric interpretation for `{name}` at {path}")
            }
            EvalError::DomainError { what, path } => write!(f, "domain error at {path}: {what}"),
            EvalError::ShapeMismatch { what, path } => {
                write!(f, "shape mismatch at {path}: {what}")
            }
        }
    }
}

fn path_str(path: &[usize]) -> String {
    if path.is_empty() {
        return "root".to_string();
    }
    let mut s = String::new();
    for (k, i) in path.iter().enumerate() {
        if k > 0 {
            s.push('.');
        }
        s.push_str(&i.to_string());
    }
    s
}

/// Evaluate `e` under assignment `a`.
pub fn eval(e: &Expr, a: &Assignment, ctx: &EvalCtx) -> Result<Value, EvalError> {
    let mut path = Vec::new();
    eval_at(e, a, ctx, &mut path)
}

fn domain(what: &str, path: &[usize]) -> EvalError {
    EvalError::DomainError {
        what: what.to_string(),
        path: path_str(path),
    }
}

fn shape(what: &str, path: &[usize]) -> EvalError {
    EvalError::ShapeMismatch {
        what: what.to_string(),
        path: path_str(path),
    }
}

fn fin(v: f64, what: &str, path: &[usize]) -> Result<Value, EvalError> {
    if v.is_finite() {
        Ok(Value::Num(v))
    } else {
        Err(domain(what, path))
    }
}

fn eval_at(e: &Expr, a: &Assignment, ctx: &EvalCtx, path: &mut Vec<usize>) -> Result<Value, EvalError> {
    match e {
        Expr::Const(v) => Ok(Value::Num(*v)),
        Expr::Var(n) | Expr::Param(n) => match a.get(n) {
            Some(Binding::Num(v)) => Ok(Value::Num(*v)),
            Some(Binding::Mat(m)) => Ok(Value::Mat(m.to_dense())),
            None => Err(EvalError::UnknownName {
                name: n.clone(),
                path: path_str(path),
            }),
        },
        Expr::Apply(f, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for (i, arg) in args.iter().enumerate() {
                path.push(i + 1);
                let v = eval_at(arg, a, ctx, path)?;
                path.pop();
                vals.push(v);
            }
            apply(f, &vals, e, a, ctx, path)
        }
    }
}

fn num2(vals: &[Value], path: &[usize]) -> Result<(f64, f64), EvalError> {
    match (&vals[0], &vals[1]) {
        (Value::Num(a), Value::Num(b)) => Ok((*a, *b)),
        _ => Err(shape("expected two scalars", path)),
    }
}

fn num1(vals: &[Value], path: &[usize]) -> Result<f64, EvalError> {
    vals[0]
        .as_num()
        .ok_or_else(|| shape("expected a scalar", path))
}

fn mat1<'v>(vals: &'v [Value], path: &[usize]) -> Result<&'v Mat, EvalError> {
    match &vals[0] {
        Value::Mat(m) => Ok(m),
        _ => Err(shape("expected a matrix", path)),
    }
}

fn index_of(v: &Value, n: usize, path: &[usize]) -> Result<usize, EvalError> {
    let x = v
        .as_num()
        .ok_or_else(|| shape("index must be a number", path))?;
    let i = x as usize;
    if (i as f64) == x && i < n {
        Ok(i)
    } else {
        Err(shape("index out of range", path))
    }
}

fn entrywise(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64, path: &[usize]) -> Result<Value, EvalError> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(shape("matrix dimensions differ", path));
    }
    let mut out = a.clone();
    for (x, y) in out.data.iter_mut().zip(b.data.iter()) {
        *x = f(*x, *y);
    }
    Ok(Value::Mat(out))
}

fn apply(
    f: &str,
    vals: &[Value],
    e: &Expr,
    a: &Assignment,
    ctx: &EvalCtx,
    path: &[usize],
) -> Result<Value, EvalError> {
    let tol = ctx.feas_tol;
    match f {
        "add" | "sub" => {
            let sign = if f == "add" { 1.0 } else { -1.0 };
            match (&vals[0], &vals[1]) {
                (Value::Num(x), Value::Num(y)) => fin(x + sign * y, "non-finite sum", path),
                (Value::Mat(x), Value::Mat(y)) => entrywise(x, y, |p, q| p + sign * q, path),
                _ => Err(shape("mismatched operands", path)),
            }
        }
        "neg" => match &vals[0] {
            Value::Num(x) => Ok(Value::Num(-x)),
            Value::Mat(m) => {
                let mut out = m.clone();
                for v in &mut out.data {
                    *v = -*v;
                }
                Ok(Value::Mat(out))
            }
            _ => Err(shape("cannot negate", path)),
        },
        "smul" => {
            let c = num1(vals, path)?;
            match &vals[1] {
                Value::Num(x) => fin(c * x, "non-finite product", path),
                Value::Mat(m) => {
                    let mut out = m.clone();
                    for v in &mut out.data {
                        *v *= c;
                    }
                    Ok(Value::Mat(out))
                }
                _ => Err(shape("cannot scale", path)),
            }
        }
        "mul" => {
            let (x, y) = num2(vals, path)?;
            fin(x * y, "non-finite product", path)
        }
        "div" => {
            let (x, y) = num2(vals, path)?;
            if y == 0.0 {
                return Err(domain("division by zero", path));
            }
            fin(x / y, "non-finite quotient", path)
        }
        "pow" => {
            let (x, y) = num2(vals, path)?;
            fin(num::pow(x, y), "power outside domain", path)
        }
        "sum" => {
            let mut s = 0.0;
            for v in vals {
                s += v.as_num().ok_or_else(|| shape("sum of non-scalars", path))?;
            }
            fin(s, "non-finite sum", path)
        }
        "sqrt" => {
            let x = num1(vals, path)?;
            if x < -tol {
                return Err(domain("sqrt of a negative value", path));
            }
            Ok(Value::Num(num::sqrt(num::max(x, 0.0))))
        }
        "log" => {
            let x = num1(vals, path)?;
            if x <= 0.0 {
                return Err(domain("log of a non-positive value", path));
            }
            fin(num::ln(x), "non-finite logarithm", path)
        }
        "exp" => fin(num::exp(num1(vals, path)?), "exp overflow", path),
        "square" => {
            let x = num1(vals, path)?;
            fin(x * x, "non-finite square", path)
        }
        "abs" => Ok(Value::Num(num::abs(num1(vals, path)?))),
        "vec" => {
            let mut out = Vec::with_capacity(vals.len());
            for v in vals {
                out.push(v.as_num().ok_or_else(|| shape("vector of non-scalars", path))?);
            }
            Ok(Value::Vector(out))
        }
        "entry" => {
            let m = mat1(vals, path)?;
            let i = index_of(&vals[1], m.rows, path)?;
            let j = index_of(&vals[2], m.cols, path)?;
            Ok(Value::Num(m.at(i, j)))
        }
        "trace" => {
            let m = mat1(vals, path)?;
            if !m.is_square() {
                return Err(shape("trace of a non-square matrix", path));
            }
            let mut s = 0.0;
            for i in 0..m.rows {
                s += m.at(i, i);
            }
            fin(s, "non-finite trace", path)
        }
        "logdet" => {
            let m = mat1(vals, path)?;
            let l = linalg::chol_lower(m)
                .ok_or_else(|| domain("logdet of a non positive definite matrix", path))?;
            let mut s = 0.0;
            for i in 0..l.rows {
                s += num::ln(l.at(i, i));
            }
            fin(2.0 * s, "non-finite logdet", path)
        }
        "det" => {
            let m = mat1(vals, path)?;
            let d = linalg::det(m).ok_or_else(|| shape("det of a non-square matrix", path))?;
            fin(d, "non-finite determinant", path)
        }
        "inv" => {
            let m = mat1(vals, path)?;
            linalg::inv(m)
                .map(Value::Mat)
                .ok_or_else(|| domain("inverse of a singular matrix", path))
        }
        "chol" => {
            let m = mat1(vals, path)?;
            linalg::chol_lower(m)
                .map(Value::Mat)
                .ok_or_else(|| domain("Cholesky of a non positive definite matrix", path))
        }
        "matmul" => {
            let (x, y) = match (&vals[0], &vals[1]) {
                (Value::Mat(x), Value::Mat(y)) => (x, y),
                _ => return Err(shape("matmul of non-matrices", path)),
            };
            x.matmul(y)
                .map(Value::Mat)
                .ok_or_else(|| shape("matmul dimension mismatch", path))
        }
        "diagm" => Ok(Value::Mat(mat1(vals, path)?.diag_part())),
        "upperm" => Ok(Value::Mat(mat1(vals, path)?.upper_part())),
        "transp" => Ok(Value::Mat(mat1(vals, path)?.transpose())),
        "symu" => mat1(vals, path)?
            .symmetrize_upper()
            .map(Value::Mat)
            .ok_or_else(|| shape("symu of a non-square matrix", path)),
        "block2" => {
            let ms: Vec<&Mat> = vals
                .iter()
                .map(|v| match v {
                    Value::Mat(m) => Ok(m),
                    _ => Err(shape("block2 of non-matrices", path)),
                })
                .collect::<Result<_, _>>()?;
            Mat::block2(ms[0], ms[1], ms[2], ms[3])
                .map(Value::Mat)
                .ok_or_else(|| shape("block2 needs four equal square blocks", path))
        }

        // Relational and cone atoms evaluate to truth values; membership is
        // tested within the feasibility tolerance.
        "eq" => {
            let (l, r) = num2(vals, path)?;
            Ok(Value::Bool(num::abs(l - r) <= tol))
        }
        "le" => {
            let (l, r) = num2(vals, path)?;
            Ok(Value::Bool(l <= r + tol))
        }
        "lt" => {
            let (l, r) = num2(vals, path)?;
            Ok(Value::Bool(l < r))
        }
        "zeroCone" => Ok(Value::Bool(num::abs(num1(vals, path)?) <= tol)),
        "posOrthCone" => Ok(Value::Bool(num1(vals, path)? >= -tol)),
        "soCone" | "rotatedSoCone" | "expCone" | "psdCone" | "posdef" => {
            let viol = cone_violation(f, vals, path)?;
            if f == "posdef" {
                // Strict membership.
                Ok(Value::Bool(viol == 0.0 && strict_posdef(vals)))
            } else {
                Ok(Value::Bool(viol <= tol))
            }
        }

        _ => {
            // User atoms carry their defining expression.
            if let Some(decl) = ctx.registry.resolve(f, matrix_dim_of_value(vals)) {
                if !is_self_application(&decl.body, f) {
                    let args = match e {
                        Expr::Apply(_, args) => args,
                        _ => unreachable!(),
                    };
                    let inst = decl.instantiate(&decl.body, args, &alloc::collections::BTreeMap::new());
                    let mut p = path.to_vec();
                    return eval_at(&inst, a, ctx, &mut p);
                }
            }
            Err(EvalError::UnknownAtom {
                name: f.to_string(),
                path: path_str(path),
            })
        }
    }
}

fn is_self_application(body: &Expr, name: &str) -> bool {
    matches!(body, Expr::Apply(f, _) if f == name)
}

fn matrix_dim_of_value(vals: &[Value]) -> Option<usize> {
    vals.iter().find_map(|v| match v {
        Value::Mat(m) if m.is_square() => Some(m.rows),
        _ => None,
    })
}

fn strict_posdef(vals: &[Value]) -> bool {
    match &vals[0] {
        Value::Mat(m) => linalg::sym_eig_min(m).map(|l| l > 0.0).unwrap_or(false),
        _ => false,
    }
}

/// Violation magnitude of a cone membership; 0 means inside the closed cone.
fn cone_violation(f: &str, vals: &[Value], path: &[usize]) -> Result<f64, EvalError> {
    match f {
        "soCone" => {
            let t = num1(vals, path)?;
            let xs = match &vals[1] {
                Value::Vector(xs) => xs.clone(),
                Value::Num(x) => alloc::vec![*x],
                _ => return Err(shape("soCone tail must be a vector", path)),
            };
            let norm = num::sqrt(xs.iter().map(|x| x * x).sum());
            Ok(num::max(0.0, norm - t))
        }
        "rotatedSoCone" => {
            let v = num1(vals, path)?;
            let w = vals[1]
                .as_num()
                .ok_or_else(|| shape("rotatedSoCone takes scalars", path))?;
            let xs = match &vals[2] {
                Value::Vector(xs) => xs.clone(),
                Value::Num(x) => alloc::vec![*x],
                _ => return Err(shape("rotatedSoCone tail must be a vector", path)),
            };
            let sq: f64 = xs.iter().map(|x| x * x).sum();
            let mut viol = num::max(0.0, sq - 2.0 * v * w);
            viol = num::max(viol, num::max(0.0, -v));
            viol = num::max(viol, num::max(0.0, -w));
            Ok(viol)
        }
        "expCone" => {
            let a = num1(vals, path)?;
            let b = vals[1]
                .as_num()
                .ok_or_else(|| shape("expCone takes scalars", path))?;
            let c = vals[2]
                .as_num()
                .ok_or_else(|| shape("expCone takes scalars", path))?;
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            let lhs = b * num::exp(a / b);
            if !lhs.is_finite() {
                return Ok(f64::INFINITY);
            }
            Ok(num::max(0.0, lhs - c))
        }
        "psdCone" | "posdef" => {
            let m = mat1(vals, path)?;
            let lo = linalg::sym_eig_min(m)
                .ok_or_else(|| shape("PSD check needs a square matrix", path))?;
            Ok(num::max(0.0, -lo))
        }
        _ => Err(shape("not a cone", path)),
    }
}

/// Violation magnitude of a relational or cone-rooted constraint body:
/// 0 means satisfied (as a closed condition), larger means further outside.
pub fn constraint_violation(body: &Expr, a: &Assignment, ctx: &EvalCtx) -> Result<f64, EvalError> {
    let (f, args) = match body {
        Expr::Apply(f, args) => (f.as_str(), args),
        _ => {
            return Err(shape("constraint root must be an atom application", &[]));
        }
    };
    let mut vals = Vec::with_capacity(args.len());
    for (i, arg) in args.iter().enumerate() {
        let mut path = alloc::vec![i + 1];
        vals.push(eval_at(arg, a, ctx, &mut path)?);
    }
    match f {
        "eq" => {
            let (l, r) = num2(&vals, &[])?;
            Ok(num::abs(l - r))
        }
        "le" | "lt" => {
            let (l, r) = num2(&vals, &[])?;
            Ok(num::max(0.0, l - r))
        }
        "zeroCone" => Ok(num::abs(num1(&vals, &[])?)),
        "posOrthCone" => Ok(num::max(0.0, -num1(&vals, &[])?)),
        "soCone" | "rotatedSoCone" | "expCone" | "psdCone" | "posdef" => {
            cone_violation(f, &vals, &[])
        }
        _ => Err(shape("constraint root is not relational", &[])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    fn ctx(reg: &AtomRegistry) -> EvalCtx<'_> {
        EvalCtx::new(reg)
    }

    #[test]
    fn eval_identity() {
        let reg = AtomRegistry::builtin();
        let mut a = Assignment::new();
        a.set_num("x", 3.0);
        let v = eval(&Expr::var("x"), &a, &ctx(&reg)).unwrap();
        assert_eq!(v, Value::Num(3.0));
    }

    #[test]
    fn eval_sqrt_at_reported_solution() {
        // sqrt(x - y) at the solver's answer for the worked example.
        let reg = AtomRegistry::builtin();
        let mut a = Assignment::new();
        a.set_num("x", -1.414214);
        a.set_num("y", -5.828427);
        let e = Expr::apply("sqrt", alloc::vec![Expr::sub(Expr::var("x"), Expr::var("y"))]);
        let v = eval(&e, &a, &ctx(&reg)).unwrap().as_num().unwrap();
        assert!((v - 2.101003).abs() < 1e-6);
    }

    #[test]
    fn eval_exp_plus_log() {
        let reg = AtomRegistry::builtin();
        let mut a = Assignment::new();
        a.set_num("x", 1.0);
        let e = Expr::add(
            Expr::apply("exp", alloc::vec![Expr::var("x")]),
            Expr::apply("log", alloc::vec![Expr::var("x")]),
        );
        let v = eval(&e, &a, &ctx(&reg)).unwrap().as_num().unwrap();
        assert!((v - core::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn eval_reports_domain_error_with_path() {
        let reg = AtomRegistry::builtin();
        let mut a = Assignment::new();
        a.set_num("x", -2.0);
        let e = Expr::add(Expr::Const(1.0), Expr::apply("log", alloc::vec![Expr::var("x")]));
        match eval(&e, &a, &ctx(&reg)) {
            Err(EvalError::DomainError { path, .. }) => assert_eq!(path, "2"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn eval_unknown_name() {
        let reg = AtomRegistry::builtin();
        let a = Assignment::new();
        assert!(matches!(
            eval(&Expr::var("nope"), &a, &ctx(&reg)),
            Err(EvalError::UnknownName { .. })
        ));
    }

    #[test]
    fn logdet_matches_log_at_dim_one() {
        let reg = AtomRegistry::builtin();
        let mut m = crate::linalg::SymMat::zeros(1);
        m.set(0, 0, 2.5);
        let mut a = Assignment::new();
        a.set_mat("S", m);
        a.set_num("s", 2.5);
        let ld = eval(&Expr::apply("logdet", alloc::vec![Expr::var("S")]), &a, &ctx(&reg))
            .unwrap()
            .as_num()
            .unwrap();
        let lg = eval(&Expr::apply("log", alloc::vec![Expr::var("s")]), &a, &ctx(&reg))
            .unwrap()
            .as_num()
            .unwrap();
        assert!((ld - lg).abs() < 1e-12);
    }

    #[test]
    fn cone_membership_tolerance() {
        let reg = AtomRegistry::builtin();
        let a = Assignment::new();
        let c = EvalCtx::with_tol(&reg, 1e-6);
        // Slightly negative but within tolerance.
        let e = Expr::apply("posOrthCone", alloc::vec![Expr::Const(-1e-9)]);
        assert_eq!(eval(&e, &a, &c).unwrap(), Value::Bool(true));
        let e = Expr::apply("posOrthCone", alloc::vec![Expr::Const(-1e-3)]);
        assert_eq!(eval(&e, &a, &c).unwrap(), Value::Bool(false));
    }

    #[test]
    fn rotated_cone_semantics() {
        let reg = AtomRegistry::builtin();
        let a = Assignment::new();
        let c = EvalCtx::new(&reg);
        // 2*0.5*4 = 4 >= 2^2: boundary, inside.
        let e = Expr::apply(
            "rotatedSoCone",
            alloc::vec![
                Expr::Const(0.5),
                Expr::Const(4.0),
                Expr::apply("vec", alloc::vec![Expr::Const(2.0)])
            ],
        );
        assert_eq!(eval(&e, &a, &c).unwrap(), Value::Bool(true));
        let e = Expr::apply(
            "rotatedSoCone",
            alloc::vec![
                Expr::Const(0.5),
                Expr::Const(4.0),
                Expr::apply("vec", alloc::vec![Expr::Const(2.1)])
            ],
        );
        assert_eq!(eval(&e, &a, &c).unwrap(), Value::Bool(false));
    }
}
