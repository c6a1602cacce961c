//! Affine-form extraction.
//!
//! `affine_form` decides, structurally, whether an expression is affine in a
//! given set of optimization variables, and if so returns a coefficient map
//! plus constant. Coefficients are themselves variable-free expressions, so
//! unbound parameters survive inside them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use serde::Serialize;

use crate::atom::AtomRegistry;
use crate::eval::{eval, EvalCtx, EvalError, Value};
use crate::expr::{Assignment, Binding, Expr, Shape, VarDecl};

/// One scalar coordinate of the variable space: a scalar variable or an
/// upper-triangle entry of a symmetric matrix variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum VarKey {
    Scalar(String),
    Entry(String, usize, usize),
}

impl VarKey {
    pub fn entry(name: &str, i: usize, j: usize) -> VarKey {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        VarKey::Entry(alloc::borrow::ToOwned::to_owned(name), i, j)
    }

    pub fn lookup(&self, a: &Assignment) -> Option<f64> {
        match self {
            VarKey::Scalar(n) => a.num(n),
            VarKey::Entry(n, i, j) => match a.get(n) {
                Some(Binding::Mat(m)) => Some(m.at(*i, *j)),
                _ => None,
            },
        }
    }
}

impl core::fmt::Display for VarKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            VarKey::Scalar(n) => write!(f, "{n}"),
            VarKey::Entry(n, i, j) => write!(f, "{n}[{i},{j}]"),
        }
    }
}

/// Affine form with variable-free coefficient expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub terms: BTreeMap<VarKey, Expr>,
    pub constant: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AffineResult {
    Affine(AffineForm),
    NotAffine,
}

impl AffineResult {
    pub fn into_form(self) -> Option<AffineForm> {
        match self {
            AffineResult::Affine(f) => Some(f),
            AffineResult::NotAffine => None,
        }
    }
}

fn coef_add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(x), _) if *x == 0.0 => b,
        (_, Expr::Const(y)) if *y == 0.0 => a,
        _ => Expr::add(a, b),
    }
}

fn coef_neg(a: Expr) -> Expr {
    match &a {
        Expr::Const(x) => Expr::Const(-x),
        _ => Expr::neg(a),
    }
}

fn coef_mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(x), _) if *x == 1.0 => b,
        (_, Expr::Const(y)) if *y == 1.0 => a,
        (Expr::Const(x), _) if *x == 0.0 => Expr::Const(0.0),
        (_, Expr::Const(y)) if *y == 0.0 => Expr::Const(0.0),
        _ => Expr::apply("mul", alloc::vec![a, b]),
    }
}

fn coef_div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
        _ => Expr::apply("div", alloc::vec![a, b]),
    }
}

impl AffineForm {
    pub fn constant(c: Expr) -> AffineForm {
        AffineForm {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn term(key: VarKey) -> AffineForm {
        let mut terms = BTreeMap::new();
        terms.insert(key, Expr::Const(1.0));
        AffineForm {
            terms,
            constant: Expr::Const(0.0),
        }
    }

    pub fn add(mut self, other: AffineForm) -> AffineForm {
        for (k, c) in other.terms {
            let entry = self.terms.remove(&k);
            let merged = match entry {
                Some(prev) => coef_add(prev, c),
                None => c,
            };
            self.terms.insert(k, merged);
        }
        self.constant = coef_add(self.constant, other.constant);
        self
    }

    pub fn neg(mut self) -> AffineForm {
        for c in self.terms.values_mut() {
            *c = coef_neg(c.clone());
        }
        self.constant = coef_neg(self.constant);
        self
    }

    pub fn scale(mut self, c: &Expr) -> AffineForm {
        for coef in self.terms.values_mut() {
            *coef = coef_mul(c.clone(), coef.clone());
        }
        self.constant = coef_mul(c.clone(), self.constant);
        self
    }

    pub fn scale_inv(mut self, c: &Expr) -> AffineForm {
        for coef in self.terms.values_mut() {
            *coef = coef_div(coef.clone(), c.clone());
        }
        self.constant = coef_div(self.constant, c.clone());
        self
    }

    /// Evaluate coefficient expressions into plain numbers. Parameters are
    /// looked up in `env`.
    pub fn to_numeric(
        &self,
        env: &Assignment,
        registry: &AtomRegistry,
    ) -> Result<NumAffineForm, EvalError> {
        let ctx = EvalCtx::new(registry);
        let coef = |e: &Expr| -> Result<f64, EvalError> {
            match eval(e, env, &ctx)? {
                Value::Num(v) => Ok(v),
                _ => Err(EvalError::ShapeMismatch {
                    what: alloc::string::String::from("coefficient is not scalar"),
                    path: alloc::string::String::from("root"),
                }),
            }
        };
        let mut terms = Vec::with_capacity(self.terms.len());
        for (k, c) in &self.terms {
            let v = coef(c)?;
            if v != 0.0 {
                terms.push((k.clone(), v));
            }
        }
        Ok(NumAffineForm {
            terms,
            constant: coef(&self.constant)?,
        })
    }
}

/// Fully numeric affine form; term order follows the `VarKey` ordering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumAffineForm {
    pub terms: Vec<(VarKey, f64)>,
    pub constant: f64,
}

impl NumAffineForm {
    pub fn eval_at(&self, a: &Assignment) -> Option<f64> {
        let mut s = self.constant;
        for (k, c) in &self.terms {
            s += c * k.lookup(a)?;
        }
        Some(s)
    }
}

/// Decide whether `e` is affine in `vars` and extract the form.
pub fn affine_form(e: &Expr, vars: &[VarDecl]) -> AffineResult {
    let env = VarEnv::new(vars);
    scalar_form(e, &env)
}

struct VarEnv {
    names: BTreeSet<String>,
    shapes: BTreeMap<String, Shape>,
}

impl VarEnv {
    fn new(vars: &[VarDecl]) -> Self {
        VarEnv {
            names: vars.iter().map(|v| v.name.clone()).collect(),
            shapes: vars.iter().map(|v| (v.name.clone(), v.shape)).collect(),
        }
    }

    fn is_var(&self, n: &str) -> bool {
        self.names.contains(n)
    }

    fn matrix_dim(&self, n: &str) -> Option<usize> {
        match self.shapes.get(n) {
            Some(Shape::SymMatrix(k)) => Some(*k),
            _ => None,
        }
    }
}

fn scalar_form(e: &Expr, env: &VarEnv) -> AffineResult {
    use AffineResult::*;
    match e {
        Expr::Const(v) => Affine(AffineForm::constant(Expr::Const(*v))),
        Expr::Param(_) => Affine(AffineForm::constant(e.clone())),
        Expr::Var(n) => {
            if env.is_var(n) {
                match env.shapes.get(n) {
                    Some(Shape::Scalar) => Affine(AffineForm::term(VarKey::Scalar(n.clone()))),
                    // A bare matrix variable is not a scalar expression.
                    _ => NotAffine,
                }
            } else {
                Affine(AffineForm::constant(e.clone()))
            }
        }
        Expr::Apply(f, args) => match f.as_str() {
            "add" | "sub" => {
                let a = match scalar_form(&args[0], env) {
                    Affine(a) => a,
                    NotAffine => return NotAffine,
                };
                let b = match scalar_form(&args[1], env) {
                    Affine(b) => b,
                    NotAffine => return NotAffine,
                };
                Affine(if f == "add" { a.add(b) } else { a.add(b.neg()) })
            }
            "neg" => match scalar_form(&args[0], env) {
                Affine(a) => Affine(a.neg()),
                NotAffine => NotAffine,
            },
            "sum" => {
                let mut acc = AffineForm::constant(Expr::Const(0.0));
                for arg in args {
                    match scalar_form(arg, env) {
                        Affine(a) => acc = acc.add(a),
                        NotAffine => return NotAffine,
                    }
                }
                Affine(acc)
            }
            "smul" => {
                if !args[0].is_var_free(&env.names) {
                    return NotAffine;
                }
                match scalar_form(&args[1], env) {
                    Affine(a) => Affine(a.scale(&args[0])),
                    NotAffine => NotAffine,
                }
            }
            "mul" => {
                if args[0].is_var_free(&env.names) {
                    match scalar_form(&args[1], env) {
                        Affine(a) => Affine(a.scale(&args[0])),
                        NotAffine => NotAffine,
                    }
                } else if args[1].is_var_free(&env.names) {
                    match scalar_form(&args[0], env) {
                        Affine(a) => Affine(a.scale(&args[1])),
                        NotAffine => NotAffine,
                    }
                } else {
                    NotAffine
                }
            }
            "div" => {
                if !args[1].is_var_free(&env.names) {
                    return NotAffine;
                }
                match scalar_form(&args[0], env) {
                    Affine(a) => Affine(a.scale_inv(&args[1])),
                    NotAffine => NotAffine,
                }
            }
            "entry" => {
                let (i, j) = match (const_index(&args[1]), const_index(&args[2])) {
                    (Some(i), Some(j)) => (i, j),
                    _ => return NotAffine,
                };
                entry_form(&args[0], i, j, env)
            }
            "trace" => {
                let n = match matrix_dim(&args[0], env) {
                    Some(n) => n,
                    None => return NotAffine,
                };
                let mut acc = AffineForm::constant(Expr::Const(0.0));
                for i in 0..n {
                    match entry_form(&args[0], i, i, env) {
                        Affine(a) => acc = acc.add(a),
                        NotAffine => return NotAffine,
                    }
                }
                Affine(acc)
            }
            _ => {
                // Any other application is affine only when it contains no
                // optimization variable at all.
                if e.is_var_free(&env.names) {
                    Affine(AffineForm::constant(e.clone()))
                } else {
                    NotAffine
                }
            }
        },
    }
}

fn const_index(e: &Expr) -> Option<usize> {
    match e {
        Expr::Const(v) if *v >= 0.0 && crate::num::is_int(*v) => Some(*v as usize),
        _ => None,
    }
}

/// Scalar affine form of entry (i, j) of a matrix-shaped expression.
fn entry_form(e: &Expr, i: usize, j: usize, env: &VarEnv) -> AffineResult {
    use AffineResult::*;
    match e {
        Expr::Var(n) => {
            if env.is_var(n) {
                match env.matrix_dim(n) {
                    Some(d) if i < d && j < d => Affine(AffineForm::term(VarKey::entry(n, i, j))),
                    _ => NotAffine,
                }
            } else {
                Affine(AffineForm::constant(Expr::entry(e.clone(), i, j)))
            }
        }
        Expr::Param(_) => Affine(AffineForm::constant(Expr::entry(e.clone(), i, j))),
        Expr::Apply(f, args) => match f.as_str() {
            "add" | "sub" => {
                let a = match entry_form(&args[0], i, j, env) {
                    Affine(a) => a,
                    NotAffine => return NotAffine,
                };
                let b = match entry_form(&args[1], i, j, env) {
                    Affine(b) => b,
                    NotAffine => return NotAffine,
                };
                Affine(if f == "add" { a.add(b) } else { a.add(b.neg()) })
            }
            "neg" => match entry_form(&args[0], i, j, env) {
                Affine(a) => Affine(a.neg()),
                NotAffine => NotAffine,
            },
            "smul" => {
                if !args[0].is_var_free(&env.names) {
                    return NotAffine;
                }
                match entry_form(&args[1], i, j, env) {
                    Affine(a) => Affine(a.scale(&args[0])),
                    NotAffine => NotAffine,
                }
            }
            "diagm" => {
                if i == j {
                    entry_form(&args[0], i, i, env)
                } else {
                    Affine(AffineForm::constant(Expr::Const(0.0)))
                }
            }
            "upperm" => {
                if i <= j {
                    entry_form(&args[0], i, j, env)
                } else {
                    Affine(AffineForm::constant(Expr::Const(0.0)))
                }
            }
            "transp" => entry_form(&args[0], j, i, env),
            "symu" => {
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                entry_form(&args[0], lo, hi, env)
            }
            "block2" => {
                let half = match matrix_dim(&args[0], env) {
                    Some(n) => n,
                    None => return NotAffine,
                };
                let (bi, ii) = (i / half, i % half);
                let (bj, jj) = (j / half, j % half);
                let block = match (bi, bj) {
                    (0, 0) => &args[0],
                    (0, 1) => &args[1],
                    (1, 0) => &args[2],
                    (1, 1) => &args[3],
                    _ => return NotAffine,
                };
                entry_form(block, ii, jj, env)
            }
            _ => {
                if e.is_var_free(&env.names) {
                    Affine(AffineForm::constant(Expr::entry(e.clone(), i, j)))
                } else {
                    NotAffine
                }
            }
        },
        Expr::Const(_) => NotAffine,
    }
}

/// Dimension of a matrix-shaped expression, when derivable from the
/// variable declarations.
fn matrix_dim(e: &Expr, env: &VarEnv) -> Option<usize> {
    match e {
        Expr::Var(n) => env.matrix_dim(n),
        Expr::Apply(f, args) => match f.as_str() {
            "add" | "sub" => matrix_dim(&args[0], env).or_else(|| matrix_dim(&args[1], env)),
            "neg" | "diagm" | "upperm" | "transp" | "symu" | "chol" | "inv" => {
                matrix_dim(&args[0], env)
            }
            "smul" => matrix_dim(&args[1], env),
            "matmul" => matrix_dim(&args[0], env),
            "block2" => matrix_dim(&args[0], env).map(|n| 2 * n),
            _ => None,
        },
        _ => None,
    }
}

/// Dimension of a matrix expression given variable declarations.
pub fn matrix_dim_in(e: &Expr, vars: &[VarDecl]) -> Option<usize> {
    matrix_dim(e, &VarEnv::new(vars))
}

/// Per-entry affine forms of a matrix-shaped affine expression.
pub fn matrix_affine_entries(e: &Expr, vars: &[VarDecl]) -> Option<Vec<Vec<AffineForm>>> {
    let env = VarEnv::new(vars);
    let n = matrix_dim(e, &env)?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            match entry_form(e, i, j, &env) {
                AffineResult::Affine(f) => row.push(f),
                AffineResult::NotAffine => return None,
            }
        }
        rows.push(row);
    }
    Some(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VarDecl;

    fn vars_xy() -> Vec<VarDecl> {
        alloc::vec![VarDecl::scalar("x"), VarDecl::scalar("y")]
    }

    #[test]
    fn direct_expansion() {
        // 2*x - 3 - y  ->  {x: 2, y: -1}, const -3
        let e = Expr::sub(
            Expr::sub(Expr::smul(Expr::Const(2.0), Expr::var("x")), Expr::Const(3.0)),
            Expr::var("y"),
        );
        let f = affine_form(&e, &vars_xy()).into_form().unwrap();
        assert_eq!(f.terms[&VarKey::Scalar("x".into())], Expr::Const(2.0));
        assert_eq!(f.terms[&VarKey::Scalar("y".into())], Expr::Const(-1.0));
        assert_eq!(f.constant, Expr::Const(-3.0));
    }

    #[test]
    fn sqrt_is_not_affine() {
        let e = Expr::apply("sqrt", alloc::vec![Expr::var("x")]);
        assert_eq!(affine_form(&e, &vars_xy()), AffineResult::NotAffine);
    }

    #[test]
    fn parameter_coefficient_survives() {
        // a*x - 3 with parameter a -> {x: a}, const -3
        let e = Expr::sub(
            Expr::smul(Expr::param("a"), Expr::var("x")),
            Expr::Const(3.0),
        );
        let f = affine_form(&e, &vars_xy()).into_form().unwrap();
        assert_eq!(f.terms[&VarKey::Scalar("x".into())], Expr::param("a"));
        assert_eq!(f.constant, Expr::Const(-3.0));
        // Numeric once the parameter is bound.
        let reg = AtomRegistry::builtin();
        let mut env = Assignment::new();
        env.set_num("a", 2.5);
        let nf = f.to_numeric(&env, &reg).unwrap();
        assert_eq!(nf.terms, alloc::vec![(VarKey::Scalar("x".into()), 2.5)]);
        assert_eq!(nf.constant, -3.0);
    }

    #[test]
    fn trace_expands_matrix_entries() {
        let vars = alloc::vec![VarDecl::matrix("S", 2)];
        let e = Expr::apply("trace", alloc::vec![Expr::var("S")]);
        let f = affine_form(&e, &vars).into_form().unwrap();
        assert_eq!(f.terms.len(), 2);
        assert!(f.terms.contains_key(&VarKey::entry("S", 0, 0)));
        assert!(f.terms.contains_key(&VarKey::entry("S", 1, 1)));
    }

    #[test]
    fn logdet_block_is_entrywise_affine() {
        // The PSD block of the log-det graph must expand per entry.
        let vars = alloc::vec![VarDecl::matrix("Y", 2), VarDecl::matrix("A", 2)];
        let upper = Expr::apply("upperm", alloc::vec![Expr::var("Y")]);
        let block = Expr::apply(
            "block2",
            alloc::vec![
                Expr::apply("diagm", alloc::vec![Expr::var("Y")]),
                upper.clone(),
                Expr::apply("transp", alloc::vec![upper]),
                Expr::var("A"),
            ],
        );
        let entries = matrix_affine_entries(&block, &vars).unwrap();
        assert_eq!(entries.len(), 4);
        // (0,0) is Y[0,0]; (0,1) is 0 (diag part); (2,3) is A[0,1] shifted.
        assert!(entries[0][0].terms.contains_key(&VarKey::entry("Y", 0, 0)));
        assert!(entries[2][3].terms.contains_key(&VarKey::entry("A", 0, 1)));
        // (1,0) of the top-left diag block is zero.
        assert!(entries[1][0].terms.is_empty());
    }
}
