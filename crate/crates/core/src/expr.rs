//! Expressions, problems and assignments: the shared vocabulary of the
//! compiler.
//!
//! Everything here is immutable after construction and freely shareable
//! across threads; the operations are pure functions.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::Serialize;

use crate::atom::AtomRegistry;
use crate::linalg::SymMat;

/// Shape of a variable or parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Shape {
    Scalar,
    /// Symmetric `n`-by-`n` matrix; only the upper triangle is stored.
    SymMatrix(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarDecl {
    pub name: String,
    pub shape: Shape,
}

impl VarDecl {
    pub fn scalar(name: &str) -> Self {
        VarDecl {
            name: name.to_owned(),
            shape: Shape::Scalar,
        }
    }

    pub fn matrix(name: &str, n: usize) -> Self {
        VarDecl {
            name: name.to_owned(),
            shape: Shape::SymMatrix(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Shape,
}

/// Immutable expression tree.
///
/// Every operator, relation, cone and user atom is an [`Expr::Apply`]; the
/// atom registry defines arity, shapes and numeric meaning of each name.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Expr {
    Const(f64),
    Var(String),
    Param(String),
    Apply(String, Vec<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_owned())
    }

    pub fn param(name: &str) -> Expr {
        Expr::Param(name.to_owned())
    }

    pub fn apply(name: &str, args: Vec<Expr>) -> Expr {
        Expr::Apply(name.to_owned(), args)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::apply("add", alloc::vec![a, b])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::apply("sub", alloc::vec![a, b])
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::apply("neg", alloc::vec![a])
    }

    pub fn smul(c: Expr, e: Expr) -> Expr {
        Expr::apply("smul", alloc::vec![c, e])
    }

    pub fn eq(l: Expr, r: Expr) -> Expr {
        Expr::apply("eq", alloc::vec![l, r])
    }

    pub fn le(l: Expr, r: Expr) -> Expr {
        Expr::apply("le", alloc::vec![l, r])
    }

    pub fn entry(m: Expr, i: usize, j: usize) -> Expr {
        Expr::apply("entry", alloc::vec![m, Expr::Const(i as f64), Expr::Const(j as f64)])
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Expr::Const(_))
    }

    /// Collect free variable names (not parameters).
    pub fn free_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) | Expr::Param(_) => {}
            Expr::Var(n) => {
                out.insert(n.clone());
            }
            Expr::Apply(_, args) => {
                for a in args {
                    a.free_vars(out);
                }
            }
        }
    }

    pub fn free_params(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Param(n) => {
                out.insert(n.clone());
            }
            Expr::Apply(_, args) => {
                for a in args {
                    a.free_params(out);
                }
            }
        }
    }

    /// True when no optimization variable from `vars` occurs in the tree.
    pub fn is_var_free(&self, vars: &BTreeSet<String>) -> bool {
        match self {
            Expr::Const(_) | Expr::Param(_) => true,
            Expr::Var(n) => !vars.contains(n),
            Expr::Apply(_, args) => args.iter().all(|a| a.is_var_free(vars)),
        }
    }

    /// Substitute variables by expressions. Names missing from the map are
    /// left untouched.
    pub fn subst_vars(&self, map: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Const(_) | Expr::Param(_) => self.clone(),
            Expr::Var(n) => map.get(n).cloned().unwrap_or_else(|| self.clone()),
            Expr::Apply(f, args) => Expr::Apply(
                f.clone(),
                args.iter().map(|a| a.subst_vars(map)).collect(),
            ),
        }
    }

    /// Substitute parameters by constant values.
    pub fn subst_params(&self, env: &Assignment) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Param(n) => match env.get(n) {
                Some(Binding::Num(v)) => Expr::Const(*v),
                _ => self.clone(),
            },
            Expr::Apply(f, args) => Expr::Apply(
                f.clone(),
                args.iter().map(|a| a.subst_params(env)).collect(),
            ),
        }
    }
}

/// Objective sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// A named constraint; the body's root must be a relational or cone atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub name: String,
    pub body: Expr,
}

impl Constraint {
    pub fn new(name: &str, body: Expr) -> Self {
        Constraint {
            name: name.to_owned(),
            body,
        }
    }
}

/// An optimization problem over named variables and parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Problem {
    pub vars: Vec<VarDecl>,
    pub params: Vec<ParamDecl>,
    /// Background conditions over parameters only.
    pub assumptions: Vec<Constraint>,
    pub sense: Sense,
    pub objective: Expr,
    pub constraints: Vec<Constraint>,
}

/// Problem-level validation failures.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    DuplicateName(String),
    UnknownIdentifier(String),
    UnknownAtom(String),
    AssumptionMentionsVariable { assumption: String, var: String },
    ConstraintNotRelational(String),
    BadShape(String),
}

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ModelError::DuplicateName(n) => write!(f, "duplicate name `{n}`"),
            ModelError::UnknownIdentifier(n) => write!(f, "unknown identifier `{n}`"),
            ModelError::UnknownAtom(n) => write!(f, "unknown atom `{n}`"),
            ModelError::AssumptionMentionsVariable { assumption, var } => write!(
                f,
                "assumption `{assumption}` mentions optimization variable `{var}`"
            ),
            ModelError::ConstraintNotRelational(n) => {
                write!(f, "constraint `{n}` is not rooted in a relational or cone atom")
            }
            ModelError::BadShape(m) => write!(f, "bad shape: {m}"),
        }
    }
}

impl Problem {
    pub fn var_names(&self) -> BTreeSet<String> {
        self.vars.iter().map(|v| v.name.clone()).collect()
    }

    pub fn var_shape(&self, name: &str) -> Option<Shape> {
        self.vars
            .iter()
            .find(|v| v.name == name)
            .map(|v| v.shape)
            .or_else(|| {
                self.params
                    .iter()
                    .find(|p| p.name == name)
                    .map(|p| p.shape)
            })
    }

    /// Check the structural invariants: unique names, declared identifiers,
    /// parameter-only assumptions, relational constraint roots.
    pub fn validate(&self, registry: &AtomRegistry) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for name in self
            .vars
            .iter()
            .map(|v| &v.name)
            .chain(self.params.iter().map(|p| &p.name))
        {
            if !seen.insert(name.clone()) {
                return Err(ModelError::DuplicateName(name.clone()));
            }
        }
        for v in &self.vars {
            if let Shape::SymMatrix(n) = v.shape {
                if n == 0 {
                    return Err(ModelError::BadShape(format!("matrix `{}` has size 0", v.name)));
                }
            }
        }
        let params: BTreeSet<String> = self.params.iter().map(|p| p.name.clone()).collect();
        let vars = self.var_names();
        let check_expr = |e: &Expr| -> Result<(), ModelError> {
            let mut fv = BTreeSet::new();
            e.free_vars(&mut fv);
            for n in &fv {
                if !vars.contains(n) {
                    return Err(ModelError::UnknownIdentifier(n.clone()));
                }
            }
            let mut fp = BTreeSet::new();
            e.free_params(&mut fp);
            for n in &fp {
                if !params.contains(n) {
                    return Err(ModelError::UnknownIdentifier(n.clone()));
                }
            }
            check_atoms(e, registry)
        };
        check_expr(&self.objective)?;
        for c in &self.constraints {
            check_expr(&c.body)?;
            if !seen.insert(c.name.clone()) {
                return Err(ModelError::DuplicateName(c.name.clone()));
            }
            match &c.body {
                Expr::Apply(f, _) if registry.is_predicate(f) => {}
                _ => return Err(ModelError::ConstraintNotRelational(c.name.clone())),
            }
        }
        for a in &self.assumptions {
            check_expr(&a.body)?;
            let mut fv = BTreeSet::new();
            a.body.free_vars(&mut fv);
            if let Some(v) = fv.iter().next() {
                return Err(ModelError::AssumptionMentionsVariable {
                    assumption: a.name.clone(),
                    var: v.clone(),
                });
            }
        }
        Ok(())
    }

    /// Substitute numeric parameter values everywhere. Leaves the parameter
    /// declarations in place so the problem still prints with them.
    pub fn bind_params(&self, env: &Assignment) -> Problem {
        Problem {
            vars: self.vars.clone(),
            params: self.params.clone(),
            assumptions: self
                .assumptions
                .iter()
                .map(|c| Constraint {
                    name: c.name.clone(),
                    body: c.body.subst_params(env),
                })
                .collect(),
            sense: self.sense,
            objective: self.objective.subst_params(env),
            constraints: self
                .constraints
                .iter()
                .map(|c| Constraint {
                    name: c.name.clone(),
                    body: c.body.subst_params(env),
                })
                .collect(),
        }
    }
}

fn check_atoms(e: &Expr, registry: &AtomRegistry) -> Result<(), ModelError> {
    if let Expr::Apply(f, args) = e {
        if !registry.knows(f) {
            return Err(ModelError::UnknownAtom(f.clone()));
        }
        for a in args {
            check_atoms(a, registry)?;
        }
    }
    Ok(())
}

/// Turn a maximization problem into the minimization of the negated
/// objective; minimization problems are returned unchanged.
pub fn normalize_sense(p: &Problem) -> Problem {
    match p.sense {
        Sense::Minimize => p.clone(),
        Sense::Maximize => Problem {
            sense: Sense::Minimize,
            objective: Expr::neg(p.objective.clone()),
            ..p.clone()
        },
    }
}

/// A bound value: scalar or symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Binding {
    Num(f64),
    Mat(SymMat),
}

/// Map from variable or parameter names to values.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Assignment {
    entries: BTreeMap<String, Binding>,
}

impl Assignment {
    pub fn new() -> Self {
        Assignment {
            entries: BTreeMap::new(),
        }
    }

    pub fn set_num(&mut self, name: &str, v: f64) {
        self.entries.insert(name.to_owned(), Binding::Num(v));
    }

    pub fn set_mat(&mut self, name: &str, m: SymMat) {
        self.entries.insert(name.to_owned(), Binding::Mat(m));
    }

    pub fn get(&self, name: &str) -> Option<&Binding> {
        self.entries.get(name)
    }

    pub fn num(&self, name: &str) -> Option<f64> {
        match self.entries.get(name) {
            Some(Binding::Num(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Binding)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Restrict to the given variable declarations, in order. Returns `None`
    /// if one of them is missing or has the wrong shape.
    pub fn project(&self, vars: &[VarDecl]) -> Option<Assignment> {
        let mut out = Assignment::new();
        for v in vars {
            match (v.shape, self.entries.get(&v.name)?) {
                (Shape::Scalar, Binding::Num(x)) => out.set_num(&v.name, *x),
                (Shape::SymMatrix(n), Binding::Mat(m)) if m.dim() == n => {
                    out.set_mat(&v.name, m.clone())
                }
                _ => return None,
            }
        }
        Some(out)
    }

    /// All stored scalars (including matrix entries) are finite.
    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|b| match b {
            Binding::Num(v) => v.is_finite(),
            Binding::Mat(m) => m.all_finite(),
        })
    }

    /// Merge, with `other` taking precedence on collisions.
    pub fn extended(&self, other: &Assignment) -> Assignment {
        let mut out = self.clone();
        for (k, v) in &other.entries {
            out.entries.insert(k.clone(), v.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::AtomRegistry;

    fn toy() -> Problem {
        // minimize x subject to c: 0 <= x
        Problem {
            vars: alloc::vec![VarDecl::scalar("x")],
            params: alloc::vec![],
            assumptions: alloc::vec![],
            sense: Sense::Minimize,
            objective: Expr::var("x"),
            constraints: alloc::vec![Constraint::new(
                "c",
                Expr::le(Expr::Const(0.0), Expr::var("x"))
            )],
        }
    }

    #[test]
    fn validate_accepts_toy() {
        let reg = AtomRegistry::builtin();
        toy().validate(&reg).unwrap();
    }

    #[test]
    fn validate_rejects_undeclared() {
        let reg = AtomRegistry::builtin();
        let mut p = toy();
        p.objective = Expr::var("zz");
        assert!(matches!(
            p.validate(&reg),
            Err(ModelError::UnknownIdentifier(_))
        ));
    }

    #[test]
    fn validate_rejects_var_in_assumption() {
        let reg = AtomRegistry::builtin();
        let mut p = toy();
        p.assumptions
            .push(Constraint::new("a", Expr::le(Expr::Const(0.0), Expr::var("x"))));
        assert!(matches!(
            p.validate(&reg),
            Err(ModelError::AssumptionMentionsVariable { .. })
        ));
    }

    #[test]
    fn normalize_sense_wraps_neg() {
        let mut p = toy();
        p.sense = Sense::Maximize;
        p.objective = Expr::neg(Expr::var("x"));
        let q = normalize_sense(&p);
        assert_eq!(q.sense, Sense::Minimize);
        // No simplification: the objective is neg(neg(x)).
        assert_eq!(q.objective, Expr::neg(Expr::neg(Expr::var("x"))));
        let r = normalize_sense(&q);
        assert_eq!(r, q);
    }
}
