//! The atom library.
//!
//! Each atom records its curvature, per-argument monotonicities, validity
//! conditions and a graph implementation: a conic problem (implementation
//! variables, objective, cone constraints) whose optimal value equals the
//! atom's function on its valid domain, together with solution expressions
//! that witness that optimum.
//!
//! Predicate atoms (relations and cone memberships) are registered as
//! concave set descriptions; their graph implementation is their conic
//! normal form.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::Serialize;

use crate::expr::{Expr, Shape};

/// Curvature of an atom, and also the role demanded of a tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Curvature {
    Convex,
    Concave,
    Affine,
}

impl Curvature {
    /// Role negation: -convex = concave, -concave = convex, -affine = affine.
    pub fn negate(self) -> Curvature {
        match self {
            Curvature::Convex => Curvature::Concave,
            Curvature::Concave => Curvature::Convex,
            Curvature::Affine => Curvature::Affine,
        }
    }
}

impl core::fmt::Display for Curvature {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Curvature::Convex => write!(f, "convex"),
            Curvature::Concave => write!(f, "concave"),
            Curvature::Affine => write!(f, "affine"),
        }
    }
}

/// Monotonicity of an atom in one argument. `Auxiliary` marks arguments
/// that must be constant at match time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    Neither,
    Auxiliary,
}

impl core::fmt::Display for Monotonicity {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Monotonicity::Increasing => write!(f, "increasing"),
            Monotonicity::Decreasing => write!(f, "decreasing"),
            Monotonicity::Neither => write!(f, "neither"),
            Monotonicity::Auxiliary => write!(f, "auxiliary"),
        }
    }
}

/// The standard cones.
///
/// Semantics: `Zero(e)`: e = 0; `PosOrth(e)`: e >= 0; `SecondOrder(t, x)`:
/// t >= ||x||_2; `RotatedSecondOrder(v, w, x)`: 2vw >= ||x||^2, v >= 0,
/// w >= 0; `Exp(a, b, c)`: b*exp(a/b) <= c with b > 0; `Psd(M)`: M symmetric
/// positive semidefinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConeKind {
    Zero,
    PosOrth,
    SecondOrder,
    RotatedSecondOrder,
    Exp,
    Psd,
}

impl ConeKind {
    pub fn from_atom(name: &str) -> Option<ConeKind> {
        match name {
            "zeroCone" => Some(ConeKind::Zero),
            "posOrthCone" => Some(ConeKind::PosOrth),
            "soCone" => Some(ConeKind::SecondOrder),
            "rotatedSoCone" => Some(ConeKind::RotatedSecondOrder),
            "expCone" => Some(ConeKind::Exp),
            "psdCone" => Some(ConeKind::Psd),
            _ => None,
        }
    }

    pub fn atom_name(self) -> &'static str {
        match self {
            ConeKind::Zero => "zeroCone",
            ConeKind::PosOrth => "posOrthCone",
            ConeKind::SecondOrder => "soCone",
            ConeKind::RotatedSecondOrder => "rotatedSoCone",
            ConeKind::Exp => "expCone",
            ConeKind::Psd => "psdCone",
        }
    }
}

/// Shape signature of one atom argument or implementation variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArgShape {
    Scalar,
    /// Vector literal argument (cone tails).
    Vector,
    /// Square symmetric matrix of any size.
    Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomArg {
    pub name: String,
    pub shape: ArgShape,
    pub mono: Monotonicity,
}

impl AtomArg {
    fn scalar(name: &str, mono: Monotonicity) -> Self {
        AtomArg {
            name: name.to_owned(),
            shape: ArgShape::Scalar,
            mono,
        }
    }
}

/// One atom declaration.
///
/// `body` is the atom's defining expression in the formal argument names;
/// `impl_vars`, `impl_objective` and `impl_constraints` form the graph
/// implementation, and `solution` gives one expression per implementation
/// variable, mentioning only the formal arguments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomDecl {
    pub name: String,
    pub args: Vec<AtomArg>,
    pub curvature: Curvature,
    pub body: Expr,
    pub vconds: Vec<Expr>,
    pub bconds: Vec<Expr>,
    pub impl_vars: Vec<(String, Shape)>,
    pub impl_objective: Expr,
    pub impl_constraints: Vec<Expr>,
    pub solution: Vec<(String, Expr)>,
    /// Set-membership atom: evaluates to a truth value.
    pub boolean: bool,
    /// Strict condition (e.g. `<`, positive definiteness): may only be
    /// discharged by condition elimination, never emitted in conic form.
    pub strict: bool,
    /// Trailing arguments repeat the last signature entry.
    pub variadic: bool,
}

impl AtomDecl {
    /// An affine atom whose graph implementation is itself.
    fn affine(name: &str, args: Vec<AtomArg>, body: Expr) -> AtomDecl {
        AtomDecl {
            name: name.to_owned(),
            args,
            curvature: Curvature::Affine,
            body: body.clone(),
            vconds: vec![],
            bconds: vec![],
            impl_vars: vec![],
            impl_objective: body,
            impl_constraints: vec![],
            solution: vec![],
            boolean: false,
            strict: false,
            variadic: false,
        }
    }

    /// A predicate atom with the given conic normal form.
    fn predicate(name: &str, args: Vec<AtomArg>, normal_form: Vec<Expr>, strict: bool) -> AtomDecl {
        let body = Expr::Apply(
            name.to_owned(),
            args.iter().map(|a| Expr::var(&a.name)).collect(),
        );
        AtomDecl {
            name: name.to_owned(),
            args,
            curvature: Curvature::Concave,
            body: body.clone(),
            vconds: vec![],
            bconds: vec![],
            impl_vars: vec![],
            impl_objective: body,
            impl_constraints: normal_form,
            solution: vec![],
            boolean: true,
            strict,
            variadic: false,
        }
    }

    pub fn arity_matches(&self, n: usize) -> bool {
        if self.variadic {
            n >= self.args.len()
        } else {
            n == self.args.len()
        }
    }

    /// Monotonicity of argument `i`, with variadic tails repeating the last
    /// declared entry.
    pub fn mono(&self, i: usize) -> Monotonicity {
        if i < self.args.len() {
            self.args[i].mono
        } else if self.variadic {
            self.args.last().map(|a| a.mono).unwrap_or(Monotonicity::Neither)
        } else {
            Monotonicity::Neither
        }
    }

    /// For atoms whose monotonicity depends on the sign of a constant
    /// argument, returns (constant argument index, affected argument index).
    pub fn sign_sensitive(&self) -> Option<(usize, usize)> {
        match self.name.as_str() {
            "smul" => Some((0, 1)),
            _ => None,
        }
    }

    /// Instantiate an expression over the formal arguments (and possibly
    /// the implementation variables) with actual expressions.
    pub fn instantiate(&self, template: &Expr, actuals: &[Expr], impl_map: &BTreeMap<String, Expr>) -> Expr {
        let mut map = impl_map.clone();
        for (i, a) in self.args.iter().enumerate() {
            if i < actuals.len() {
                map.insert(a.name.clone(), actuals[i].clone());
            }
        }
        template.subst_vars(&map)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegistryError {
    DuplicateAtom(String),
    MalformedGraphImplementation { atom: String, reason: String },
}

impl core::fmt::Display for RegistryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RegistryError::DuplicateAtom(n) => write!(f, "atom `{n}` is already registered"),
            RegistryError::MalformedGraphImplementation { atom, reason } => {
                write!(f, "malformed graph implementation for `{atom}`: {reason}")
            }
        }
    }
}

enum AtomEntry {
    Concrete(AtomDecl),
    /// Built per matrix dimension (the log-det family).
    MatrixFamily(fn(usize) -> AtomDecl),
}

/// Ordered map from atom name to declaration. Insertion order is the
/// matching priority and is fixed across runs.
pub struct AtomRegistry {
    order: Vec<String>,
    entries: BTreeMap<String, AtomEntry>,
    /// Names with a numeric interpretation but no DCP declaration
    /// (products, powers, matrix helpers used in solution expressions).
    eval_only: BTreeSet<String>,
}

/// Names evaluable but not DCP-matchable.
const EVAL_ONLY: &[&str] = &[
    "mul", "div", "pow", "chol", "matmul", "diagm", "upperm", "transp", "symu", "block2", "inv",
    "det",
];

impl AtomRegistry {
    fn empty() -> Self {
        AtomRegistry {
            order: Vec::new(),
            entries: BTreeMap::new(),
            eval_only: EVAL_ONLY.iter().map(|s| (*s).to_owned()).collect(),
        }
    }

    /// The built-in registry.
    pub fn builtin() -> Self {
        let mut reg = AtomRegistry::empty();
        for d in builtin_atoms() {
            reg.register(d).expect("builtin atom registration");
        }
        reg.entries
            .insert("logdet".to_owned(), AtomEntry::MatrixFamily(make_logdet));
        reg.order.push("logdet".to_owned());
        reg
    }

    /// Register a new atom. Fails on duplicate names and on graph
    /// implementations that are not in conic form.
    pub fn register(&mut self, d: AtomDecl) -> Result<(), RegistryError> {
        if self.entries.contains_key(&d.name) || self.eval_only.contains(&d.name) {
            return Err(RegistryError::DuplicateAtom(d.name.clone()));
        }
        validate_decl(&d)?;
        self.order.push(d.name.clone());
        self.entries.insert(d.name.clone(), AtomEntry::Concrete(d));
        Ok(())
    }

    /// True when the name has a numeric interpretation (atom or helper).
    pub fn knows(&self, name: &str) -> bool {
        self.entries.contains_key(name) || self.eval_only.contains(name)
    }

    pub fn is_atom(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_predicate(&self, name: &str) -> bool {
        match self.entries.get(name) {
            Some(AtomEntry::Concrete(d)) => d.boolean,
            _ => false,
        }
    }

    /// Resolve a declaration; matrix-family atoms need the concrete
    /// dimension of their matrix argument.
    pub fn resolve(&self, name: &str, dim: Option<usize>) -> Option<AtomDecl> {
        match self.entries.get(name)? {
            AtomEntry::Concrete(d) => Some(d.clone()),
            AtomEntry::MatrixFamily(make) => Some(make(dim?)),
        }
    }

    /// Whether the name is a size-polymorphic matrix atom.
    pub fn is_matrix_family(&self, name: &str) -> bool {
        matches!(self.entries.get(name), Some(AtomEntry::MatrixFamily(_)))
    }

    /// Registered atom names in priority order. Matrix families are listed
    /// under their bare name.
    pub fn names(&self) -> &[String] {
        &self.order
    }

    /// User-facing arity check for the parser.
    pub fn arity_ok(&self, name: &str, n: usize) -> bool {
        match self.entries.get(name) {
            Some(AtomEntry::Concrete(d)) => d.arity_matches(n),
            Some(AtomEntry::MatrixFamily(_)) => n == 1,
            None => match name {
                "mul" | "div" | "pow" | "matmul" => n == 2,
                "chol" | "diagm" | "upperm" | "transp" | "symu" | "inv" | "det" => n == 1,
                "block2" => n == 4,
                _ => false,
            },
        }
    }
}

fn validate_decl(d: &AtomDecl) -> Result<(), RegistryError> {
    let err = |reason: &str| RegistryError::MalformedGraphImplementation {
        atom: d.name.clone(),
        reason: reason.to_owned(),
    };
    for c in &d.impl_constraints {
        match c {
            Expr::Apply(f, _) if ConeKind::from_atom(f).is_some() => {}
            _ => return Err(err("implementation constraint root is not a cone")),
        }
    }
    let arg_names: BTreeSet<String> = d.args.iter().map(|a| a.name.clone()).collect();
    let impl_names: BTreeSet<String> = d.impl_vars.iter().map(|(n, _)| n.clone()).collect();
    if let Some((n, _)) = d
        .impl_vars
        .iter()
        .find(|(n, _)| arg_names.contains(n))
    {
        let _ = n;
        return Err(err("implementation variable shadows a formal argument"));
    }
    let sol_names: BTreeSet<String> = d.solution.iter().map(|(n, _)| n.clone()).collect();
    if sol_names != impl_names {
        return Err(err("solution must cover exactly the implementation variables"));
    }
    for (_, e) in &d.solution {
        let mut fv = BTreeSet::new();
        e.free_vars(&mut fv);
        if !fv.is_subset(&arg_names) {
            return Err(err("solution expression mentions a non-argument name"));
        }
    }
    let mut fv = BTreeSet::new();
    d.body.free_vars(&mut fv);
    if !fv.is_subset(&arg_names) {
        return Err(err("body mentions a non-argument name"));
    }
    let mut fv = BTreeSet::new();
    d.impl_objective.free_vars(&mut fv);
    let all: BTreeSet<String> = arg_names.union(&impl_names).cloned().collect();
    if !fv.is_subset(&all) {
        return Err(err("implementation objective mentions an unknown name"));
    }
    Ok(())
}

fn v(name: &str) -> Expr {
    Expr::var(name)
}

fn builtin_atoms() -> Vec<AtomDecl> {
    use Monotonicity::*;
    let mut atoms = Vec::new();

    // Affine scalar atoms.
    atoms.push(AtomDecl::affine(
        "add",
        vec![AtomArg::scalar("a", Increasing), AtomArg::scalar("b", Increasing)],
        Expr::add(v("a"), v("b")),
    ));
    atoms.push(AtomDecl::affine(
        "sub",
        vec![AtomArg::scalar("a", Increasing), AtomArg::scalar("b", Decreasing)],
        Expr::sub(v("a"), v("b")),
    ));
    atoms.push(AtomDecl::affine(
        "neg",
        vec![AtomArg::scalar("a", Decreasing)],
        Expr::neg(v("a")),
    ));
    atoms.push(AtomDecl::affine(
        "smul",
        vec![AtomArg::scalar("c", Auxiliary), AtomArg::scalar("a", Increasing)],
        Expr::smul(v("c"), v("a")),
    ));
    let mut sum = AtomDecl::affine(
        "sum",
        vec![AtomArg::scalar("a", Increasing)],
        Expr::apply("sum", vec![v("a")]),
    );
    sum.variadic = true;
    atoms.push(sum);
    atoms.push(AtomDecl::affine(
        "trace",
        vec![AtomArg {
            name: "m".to_owned(),
            shape: ArgShape::Matrix,
            mono: Increasing,
        }],
        Expr::apply("trace", vec![v("m")]),
    ));
    atoms.push(AtomDecl::affine(
        "entry",
        vec![
            AtomArg {
                name: "m".to_owned(),
                shape: ArgShape::Matrix,
                mono: Increasing,
            },
            AtomArg::scalar("i", Auxiliary),
            AtomArg::scalar("j", Auxiliary),
        ],
        Expr::apply("entry", vec![v("m"), v("i"), v("j")]),
    ));
    let mut vecatom = AtomDecl::affine(
        "vec",
        vec![AtomArg::scalar("a", Increasing)],
        Expr::apply("vec", vec![v("a")]),
    );
    vecatom.variadic = true;
    atoms.push(vecatom);

    // Convex atoms.
    atoms.push(AtomDecl {
        name: "square".to_owned(),
        args: vec![AtomArg::scalar("x", Neither)],
        curvature: Curvature::Convex,
        body: Expr::apply("square", vec![v("x")]),
        vconds: vec![],
        bconds: vec![],
        impl_vars: vec![("t".to_owned(), Shape::Scalar)],
        impl_objective: v("t"),
        impl_constraints: vec![Expr::apply(
            "rotatedSoCone",
            vec![v("t"), Expr::Const(0.5), Expr::apply("vec", vec![v("x")])],
        )],
        solution: vec![("t".to_owned(), Expr::apply("square", vec![v("x")]))],
        boolean: false,
        strict: false,
        variadic: false,
    });
    atoms.push(AtomDecl {
        name: "exp".to_owned(),
        args: vec![AtomArg::scalar("x", Increasing)],
        curvature: Curvature::Convex,
        body: Expr::apply("exp", vec![v("x")]),
        vconds: vec![],
        bconds: vec![],
        impl_vars: vec![("t".to_owned(), Shape::Scalar)],
        impl_objective: v("t"),
        impl_constraints: vec![Expr::apply("expCone", vec![v("x"), Expr::Const(1.0), v("t")])],
        solution: vec![("t".to_owned(), Expr::apply("exp", vec![v("x")]))],
        boolean: false,
        strict: false,
        variadic: false,
    });
    atoms.push(AtomDecl {
        name: "abs".to_owned(),
        args: vec![AtomArg::scalar("x", Neither)],
        curvature: Curvature::Convex,
        body: Expr::apply("abs", vec![v("x")]),
        vconds: vec![],
        bconds: vec![],
        impl_vars: vec![("t".to_owned(), Shape::Scalar)],
        impl_objective: v("t"),
        impl_constraints: vec![
            Expr::apply("posOrthCone", vec![Expr::sub(v("t"), v("x"))]),
            Expr::apply("posOrthCone", vec![Expr::add(v("t"), v("x"))]),
        ],
        solution: vec![("t".to_owned(), Expr::apply("abs", vec![v("x")]))],
        boolean: false,
        strict: false,
        variadic: false,
    });

    // Concave atoms.
    atoms.push(AtomDecl {
        name: "sqrt".to_owned(),
        args: vec![AtomArg::scalar("a", Increasing)],
        curvature: Curvature::Concave,
        body: Expr::apply("sqrt", vec![v("a")]),
        vconds: vec![Expr::le(Expr::Const(0.0), v("a"))],
        bconds: vec![],
        impl_vars: vec![("t".to_owned(), Shape::Scalar)],
        impl_objective: v("t"),
        impl_constraints: vec![Expr::apply(
            "rotatedSoCone",
            vec![Expr::Const(0.5), v("a"), Expr::apply("vec", vec![v("t")])],
        )],
        solution: vec![("t".to_owned(), Expr::apply("sqrt", vec![v("a")]))],
        boolean: false,
        strict: false,
        variadic: false,
    });
    atoms.push(AtomDecl {
        name: "log".to_owned(),
        args: vec![AtomArg::scalar("x", Increasing)],
        curvature: Curvature::Concave,
        body: Expr::apply("log", vec![v("x")]),
        vconds: vec![Expr::apply("lt", vec![Expr::Const(0.0), v("x")])],
        bconds: vec![],
        impl_vars: vec![("t".to_owned(), Shape::Scalar)],
        impl_objective: v("t"),
        impl_constraints: vec![Expr::apply("expCone", vec![v("t"), Expr::Const(1.0), v("x")])],
        solution: vec![("t".to_owned(), Expr::apply("log", vec![v("x")]))],
        boolean: false,
        strict: false,
        variadic: false,
    });

    // Relational atoms. `le(l, r)` holds a convex set when l is convex and
    // r is concave; both sides of `eq` must be affine.
    atoms.push(AtomDecl::predicate(
        "eq",
        vec![AtomArg::scalar("l", Neither), AtomArg::scalar("r", Neither)],
        vec![Expr::apply("zeroCone", vec![Expr::sub(v("r"), v("l"))])],
        false,
    ));
    atoms.push(AtomDecl::predicate(
        "le",
        vec![AtomArg::scalar("l", Decreasing), AtomArg::scalar("r", Increasing)],
        vec![Expr::apply("posOrthCone", vec![Expr::sub(v("r"), v("l"))])],
        false,
    ));
    atoms.push(AtomDecl::predicate(
        "lt",
        vec![AtomArg::scalar("l", Decreasing), AtomArg::scalar("r", Increasing)],
        vec![],
        true,
    ));

    // Cone membership atoms; these are their own conic form.
    atoms.push(AtomDecl::predicate(
        "zeroCone",
        vec![AtomArg::scalar("e", Neither)],
        vec![Expr::apply("zeroCone", vec![v("e")])],
        false,
    ));
    atoms.push(AtomDecl::predicate(
        "posOrthCone",
        vec![AtomArg::scalar("e", Increasing)],
        vec![Expr::apply("posOrthCone", vec![v("e")])],
        false,
    ));
    atoms.push(AtomDecl::predicate(
        "soCone",
        vec![
            AtomArg::scalar("t", Increasing),
            AtomArg {
                name: "x".to_owned(),
                shape: ArgShape::Vector,
                mono: Neither,
            },
        ],
        vec![Expr::apply("soCone", vec![v("t"), v("x")])],
        false,
    ));
    atoms.push(AtomDecl::predicate(
        "rotatedSoCone",
        vec![
            AtomArg::scalar("v", Increasing),
            AtomArg::scalar("w", Increasing),
            AtomArg {
                name: "x".to_owned(),
                shape: ArgShape::Vector,
                mono: Neither,
            },
        ],
        vec![Expr::apply("rotatedSoCone", vec![v("v"), v("w"), v("x")])],
        false,
    ));
    atoms.push(AtomDecl::predicate(
        "expCone",
        vec![
            AtomArg::scalar("a", Decreasing),
            AtomArg::scalar("b", Neither),
            AtomArg::scalar("c", Increasing),
        ],
        vec![Expr::apply("expCone", vec![v("a"), v("b"), v("c")])],
        false,
    ));
    atoms.push(AtomDecl::predicate(
        "psdCone",
        vec![AtomArg {
            name: "m".to_owned(),
            shape: ArgShape::Matrix,
            mono: Neither,
        }],
        vec![Expr::apply("psdCone", vec![v("m")])],
        false,
    ));
    atoms.push(AtomDecl::predicate(
        "posdef",
        vec![AtomArg {
            name: "m".to_owned(),
            shape: ArgShape::Matrix,
            mono: Neither,
        }],
        vec![],
        true,
    ));

    atoms
}

/// The log-det atom at a concrete dimension `n`.
///
/// Graph implementation: maximize sum t_i subject to exp(t_i) <= Y_ii and
/// [[diag(Y), upper(Y)], [upper(Y)^T, A]] positive semidefinite. The
/// solution takes Y from the Cholesky factor L of A as upper(Y) = diag(L)
/// L^T (so Y_ii = L_ii^2 and sum t_i = log det A).
fn make_logdet(n: usize) -> AtomDecl {
    let n = n.max(1);
    let a = v("A");
    let y = v("Y");
    let mut impl_vars: Vec<(String, Shape)> = (0..n)
        .map(|i| (alloc::format!("t{i}"), Shape::Scalar))
        .collect();
    impl_vars.push(("Y".to_owned(), Shape::SymMatrix(n)));

    let mut constraints: Vec<Expr> = (0..n)
        .map(|i| {
            Expr::apply(
                "expCone",
                vec![v(&alloc::format!("t{i}")), Expr::Const(1.0), Expr::entry(y.clone(), i, i)],
            )
        })
        .collect();
    let upper = Expr::apply("upperm", vec![y.clone()]);
    let block = Expr::apply(
        "block2",
        vec![
            Expr::apply("diagm", vec![y.clone()]),
            upper.clone(),
            Expr::apply("transp", vec![upper]),
            a.clone(),
        ],
    );
    constraints.push(Expr::apply("psdCone", vec![block]));

    let witness = Expr::apply(
        "symu",
        vec![Expr::apply(
            "matmul",
            vec![
                Expr::apply("diagm", vec![Expr::apply("chol", vec![a.clone()])]),
                Expr::apply("transp", vec![Expr::apply("chol", vec![a.clone()])]),
            ],
        )],
    );
    let mut solution: Vec<(String, Expr)> = (0..n)
        .map(|i| {
            (
                alloc::format!("t{i}"),
                Expr::apply("log", vec![Expr::entry(witness.clone(), i, i)]),
            )
        })
        .collect();
    solution.push(("Y".to_owned(), witness));

    let objective = Expr::apply(
        "sum",
        (0..n).map(|i| v(&alloc::format!("t{i}"))).collect(),
    );

    AtomDecl {
        name: "logdet".to_owned(),
        args: vec![AtomArg {
            name: "A".to_owned(),
            shape: ArgShape::Matrix,
            mono: Monotonicity::Neither,
        }],
        curvature: Curvature::Concave,
        body: Expr::apply("logdet", vec![a]),
        vconds: vec![Expr::apply("posdef", vec![v("A")])],
        bconds: vec![],
        impl_vars,
        impl_objective: objective,
        impl_constraints: constraints,
        solution,
        boolean: false,
        strict: false,
        variadic: false,
    }
}

// `block2` builds the PSD block of the log-det graph; it is affine in its
// entries but is only ever produced internally, so it lives with the
// eval-only helpers rather than the DCP-matchable atoms. The affine-form
// expansion in `affine` understands it directly.
pub const MATRIX_BUILDERS: &[&str] = &["diagm", "upperm", "transp", "symu", "block2"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_contains_sqrt_concave_increasing() {
        let reg = AtomRegistry::builtin();
        let d = reg.resolve("sqrt", None).unwrap();
        assert_eq!(d.curvature, Curvature::Concave);
        assert_eq!(d.args[0].mono, Monotonicity::Increasing);
        assert_eq!(d.vconds.len(), 1);
    }

    #[test]
    fn builtin_enumeration_is_stable() {
        let a = AtomRegistry::builtin();
        let b = AtomRegistry::builtin();
        assert_eq!(a.names(), b.names());
        assert!(a.names().iter().any(|n| n == "logdet"));
    }

    #[test]
    fn graph_closure_all_builtins() {
        let reg = AtomRegistry::builtin();
        for name in reg.names() {
            let dims: &[Option<usize>] = if reg.is_matrix_family(name) {
                &[Some(1), Some(2), Some(3)]
            } else {
                &[None]
            };
            for d in dims {
                let decl = reg.resolve(name, *d).unwrap();
                for c in &decl.impl_constraints {
                    match c {
                        Expr::Apply(f, _) => assert!(
                            ConeKind::from_atom(f).is_some(),
                            "{name}: non-conic implementation constraint {f}"
                        ),
                        _ => panic!("{name}: non-apply implementation constraint"),
                    }
                }
            }
        }
    }

    #[test]
    fn register_rejects_duplicates() {
        let mut reg = AtomRegistry::builtin();
        let d = reg.resolve("sqrt", None).unwrap();
        assert!(matches!(reg.register(d), Err(RegistryError::DuplicateAtom(_))));
    }

    #[test]
    fn register_rejects_nonconic_graph() {
        let mut reg = AtomRegistry::builtin();
        let mut d = reg.resolve("sqrt", None).unwrap();
        d.name = "sqrt2".to_owned();
        d.body = Expr::apply("sqrt", vec![v("a")]);
        d.impl_constraints = vec![Expr::apply("sqrt", vec![v("a")])];
        assert!(matches!(
            reg.register(d),
            Err(RegistryError::MalformedGraphImplementation { .. })
        ));
    }

    #[test]
    fn logdet_instances() {
        let reg = AtomRegistry::builtin();
        for n in 1..=3 {
            let d = reg.resolve("logdet", Some(n)).unwrap();
            assert_eq!(d.impl_vars.len(), n + 1);
            assert_eq!(d.impl_constraints.len(), n + 1);
            assert_eq!(d.solution.len(), n + 1);
        }
    }
}
