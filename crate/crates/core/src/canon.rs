//! DCP tree construction and reduction to conic form.
//!
//! `build_tree` assigns each component an atom tree whose leaves are affine in
//! the optimization variables and whose node roles follow the propagation
//! rules (increasing child keeps the parent role, decreasing child negates
//! it, neither forces affine, auxiliary children are constant leaves).
//!
//! `canonicalize` performs the graph-implementation substitution: fresh
//! variables are allocated per node, reduced expressions are assembled from
//! implementation objectives, original constraints translate to cone
//! constraints (or are dropped when consumed as atom conditions), and an
//! executable strong-equivalence witness (forward interpretation map and
//! backward projection) is constructed alongside.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::Serialize;

use crate::affine::{
    affine_form, matrix_affine_entries, matrix_dim_in, AffineResult, NumAffineForm,
};
use crate::atom::{ArgShape, AtomDecl, AtomRegistry, ConeKind, Curvature, Monotonicity};
use crate::eval::{eval, EvalCtx, EvalError, Value};
use crate::expr::{
    normalize_sense, Assignment, Constraint, Expr, ModelError, Problem, Sense, VarDecl,
};
use crate::num;

/// The curvature demanded of a tree node by its context.
pub type Role = Curvature;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TreePayload {
    /// An affine expression in the optimization variables (scalar, vector
    /// literal of affine entries, or entrywise-affine matrix).
    Leaf,
    Node {
        atom: String,
        /// Concrete dimension for size-polymorphic matrix atoms.
        dim: Option<usize>,
        children: Vec<AtomTree>,
    },
}

/// One node of a component's atom tree. Node ids are dotted paths rooted at
/// the component name (`obj.1.1` is the first child of the first child of
/// the objective root).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomTree {
    pub id: String,
    pub role: Role,
    pub oexpr: Expr,
    pub payload: TreePayload,
}

impl AtomTree {
    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, out: &mut Vec<&'a AtomTree>) {
        out.push(self);
        if let TreePayload::Node { children, .. } = &self.payload {
            for c in children {
                c.walk(out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NotDcpReason {
    CurvatureMismatch,
    NonAffineLeaf,
    UnmatchedAtom,
}

impl core::fmt::Display for NotDcpReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NotDcpReason::CurvatureMismatch => write!(f, "curvature-mismatch"),
            NotDcpReason::NonAffineLeaf => write!(f, "non-affine-leaf"),
            NotDcpReason::UnmatchedAtom => write!(f, "unmatched-atom"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CanonError {
    NotDcp {
        path: String,
        reason: NotDcpReason,
        detail: String,
    },
    UndischargedCondition {
        path: String,
        condition: String,
    },
    StrictConstraintSurvives {
        name: String,
    },
    UnboundParameter {
        name: String,
    },
    Model(ModelError),
    Eval(EvalError),
    Internal(String),
}

impl core::fmt::Display for CanonError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CanonError::NotDcp {
                path,
                reason,
                detail,
            } => write!(f, "not DCP at {path} ({reason}): {detail}"),
            CanonError::UndischargedCondition { path, condition } => {
                write!(f, "UndischargedCondition at {path}: `{condition}` is not among the problem constraints")
            }
            CanonError::StrictConstraintSurvives { name } => write!(
                f,
                "strict constraint `{name}` survives canonicalization and has no conic form"
            ),
            CanonError::UnboundParameter { name } => {
                write!(f, "parameter `{name}` must be bound to a numeric value")
            }
            CanonError::Model(e) => write!(f, "{e}"),
            CanonError::Eval(e) => write!(f, "{e}"),
            CanonError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<EvalError> for CanonError {
    fn from(e: EvalError) -> Self {
        CanonError::Eval(e)
    }
}

// ---------------------------------------------------------------------------
// Condition discharge

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RelKind {
    Eq,
    Le,
    Lt,
}

/// Canonical affine normal form of a relational expression: `form ⋈ 0`
/// with all terms moved to one side and the lexicographically least
/// variable scaled to coefficient +1 (inequalities only scale positively).
#[derive(Debug, Clone)]
struct RelNormal {
    kind: RelKind,
    form: NumAffineForm,
}

fn rel_normal(body: &Expr, vars: &[VarDecl], registry: &AtomRegistry) -> Option<RelNormal> {
    let (kind, diff) = match body {
        Expr::Apply(f, args) => match f.as_str() {
            "eq" => (RelKind::Eq, Expr::sub(args[1].clone(), args[0].clone())),
            "le" => (RelKind::Le, Expr::sub(args[1].clone(), args[0].clone())),
            "lt" => (RelKind::Lt, Expr::sub(args[1].clone(), args[0].clone())),
            "posOrthCone" => (RelKind::Le, args[0].clone()),
            "zeroCone" => (RelKind::Eq, args[0].clone()),
            _ => return None,
        },
        _ => return None,
    };
    let form = match affine_form(&diff, vars) {
        AffineResult::Affine(f) => f,
        AffineResult::NotAffine => return None,
    };
    let mut num = form.to_numeric(&Assignment::new(), registry).ok()?;
    if num.terms.is_empty() {
        return None;
    }
    let lead = num.terms[0].1;
    if lead == 0.0 {
        return None;
    }
    let scale = match kind {
        RelKind::Eq => 1.0 / lead,
        RelKind::Le | RelKind::Lt => 1.0 / num::abs(lead),
    };
    for (_, c) in num.terms.iter_mut() {
        *c *= scale;
    }
    num.constant *= scale;
    Some(RelNormal { kind, form: num })
}

fn approx(a: f64, b: f64) -> bool {
    num::abs(a - b) <= 1e-12 * num::max(1.0, num::max(num::abs(a), num::abs(b)))
}

fn rel_matches(a: &RelNormal, b: &RelNormal) -> bool {
    if a.kind != b.kind || a.form.terms.len() != b.form.terms.len() {
        return false;
    }
    if !approx(a.form.constant, b.form.constant) {
        return false;
    }
    a.form
        .terms
        .iter()
        .zip(b.form.terms.iter())
        .all(|((ka, ca), (kb, cb))| ka == kb && approx(*ca, *cb))
}

/// A pool of constraints available for discharging atom conditions.
struct CondPool {
    names: Vec<String>,
    normals: Vec<Option<RelNormal>>,
    bodies: Vec<Expr>,
}

impl CondPool {
    fn new(conds: &[Constraint], vars: &[VarDecl], registry: &AtomRegistry) -> Self {
        CondPool {
            names: conds.iter().map(|c| c.name.clone()).collect(),
            normals: conds
                .iter()
                .map(|c| rel_normal(&c.body, vars, registry))
                .collect(),
            bodies: conds.iter().map(|c| c.body.clone()).collect(),
        }
    }

    /// Try to discharge `cond`; returns the name of the matching constraint.
    fn discharge(&self, cond: &Expr, vars: &[VarDecl], registry: &AtomRegistry) -> Option<String> {
        if let Some(cn) = rel_normal(cond, vars, registry) {
            for (i, n) in self.normals.iter().enumerate() {
                if let Some(n) = n {
                    if rel_matches(&cn, n) {
                        return Some(self.names[i].clone());
                    }
                }
            }
        }
        // Structural fallback for non-affine conditions (matrix
        // definiteness and the like).
        for (i, b) in self.bodies.iter().enumerate() {
            if b == cond {
                return Some(self.names[i].clone());
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Tree construction

struct TreeBuilder<'a> {
    vars: &'a [VarDecl],
    varset: BTreeSet<String>,
    registry: &'a AtomRegistry,
    conds: CondPool,
    bconds: CondPool,
    consumed: BTreeSet<String>,
}

impl<'a> TreeBuilder<'a> {
    fn scalar_leaf_ok(&self, e: &Expr) -> bool {
        matches!(affine_form(e, self.vars), AffineResult::Affine(_))
    }

    fn build(
        &mut self,
        e: &Expr,
        role: Role,
        shape: ArgShape,
        path: &str,
    ) -> Result<AtomTree, CanonError> {
        // Maximal affine leaves: any affine subexpression becomes a single
        // leaf, regardless of its role.
        let leaf_ok = match shape {
            ArgShape::Scalar => self.scalar_leaf_ok(e),
            ArgShape::Matrix => matrix_affine_entries(e, self.vars).is_some(),
            ArgShape::Vector => false,
        };
        if leaf_ok {
            return Ok(AtomTree {
                id: path.to_owned(),
                role,
                oexpr: e.clone(),
                payload: TreePayload::Leaf,
            });
        }

        let (name, args) = match e {
            Expr::Apply(f, args) => (f.as_str(), args),
            _ => {
                return Err(CanonError::NotDcp {
                    path: path.to_owned(),
                    reason: NotDcpReason::NonAffineLeaf,
                    detail: "expression is not affine in the problem variables".to_owned(),
                })
            }
        };

        let dim = if self.registry.is_matrix_family(name) {
            match args.first().and_then(|a| matrix_dim_in(a, self.vars)) {
                Some(d) => Some(d),
                None => {
                    return Err(CanonError::NotDcp {
                        path: path.to_owned(),
                        reason: NotDcpReason::UnmatchedAtom,
                        detail: format!("cannot infer the matrix dimension of `{name}`"),
                    })
                }
            }
        } else {
            None
        };
        let decl = match self.registry.resolve(name, dim) {
            Some(d) => d,
            None => {
                return Err(CanonError::NotDcp {
                    path: path.to_owned(),
                    reason: NotDcpReason::UnmatchedAtom,
                    detail: format!("`{name}` has no DCP atom declaration"),
                })
            }
        };

        if decl.curvature != Curvature::Affine && decl.curvature != role {
            return Err(CanonError::NotDcp {
                path: path.to_owned(),
                reason: NotDcpReason::CurvatureMismatch,
                detail: format!(
                    "atom `{name}` is {} but the {role} role is required here",
                    decl.curvature
                ),
            });
        }

        // Conditions: variable conditions against the problem constraints,
        // background conditions against the assumptions.
        let no_impl = BTreeMap::new();
        for cond in &decl.vconds {
            let inst = decl.instantiate(cond, args, &no_impl);
            match self.conds.discharge(&inst, self.vars, self.registry) {
                Some(consumed) => {
                    self.consumed.insert(consumed);
                }
                None => {
                    return Err(CanonError::UndischargedCondition {
                        path: path.to_owned(),
                        condition: crate::printer::print_expr(&inst),
                    })
                }
            }
        }
        for cond in &decl.bconds {
            let inst = decl.instantiate(cond, args, &no_impl);
            if self
                .bconds
                .discharge(&inst, self.vars, self.registry)
                .is_none()
            {
                return Err(CanonError::UndischargedCondition {
                    path: path.to_owned(),
                    condition: crate::printer::print_expr(&inst),
                });
            }
        }

        let monos = self.effective_monos(&decl, args);
        let mut children = Vec::with_capacity(args.len());
        for (i, arg) in args.iter().enumerate() {
            let child_path = format!("{path}.{}", i + 1);
            let child_shape = decl_arg_shape(&decl, i);
            let child_role = match monos[i] {
                Monotonicity::Increasing => role,
                Monotonicity::Decreasing => role.negate(),
                Monotonicity::Neither => Curvature::Affine,
                Monotonicity::Auxiliary => {
                    if !arg.is_var_free(&self.varset) {
                        return Err(CanonError::NotDcp {
                            path: child_path,
                            reason: NotDcpReason::NonAffineLeaf,
                            detail: format!(
                                "argument {} of `{name}` must be constant",
                                i + 1
                            ),
                        });
                    }
                    children.push(AtomTree {
                        id: format!("{path}.{}", i + 1),
                        role: Curvature::Affine,
                        oexpr: arg.clone(),
                        payload: TreePayload::Leaf,
                    });
                    continue;
                }
            };
            children.push(self.build(arg, child_role, child_shape, &child_path)?);
        }

        Ok(AtomTree {
            id: path.to_owned(),
            role,
            oexpr: e.clone(),
            payload: TreePayload::Node {
                atom: name.to_owned(),
                dim,
                children,
            },
        })
    }

    /// Monotonicities with sign resolution: a scalar multiple by a negative
    /// constant flips the direction of its expression argument.
    fn effective_monos(&self, decl: &AtomDecl, args: &[Expr]) -> Vec<Monotonicity> {
        let mut monos: Vec<Monotonicity> = (0..args.len()).map(|i| decl.mono(i)).collect();
        if let Some((const_idx, affected)) = decl.sign_sensitive() {
            if let Some(c) = args.get(const_idx).and_then(|e| const_value(e, self.registry)) {
                if c < 0.0 {
                    monos[affected] = match monos[affected] {
                        Monotonicity::Increasing => Monotonicity::Decreasing,
                        Monotonicity::Decreasing => Monotonicity::Increasing,
                        other => other,
                    };
                }
            }
        }
        monos
    }
}

fn decl_arg_shape(decl: &AtomDecl, i: usize) -> ArgShape {
    if i < decl.args.len() {
        decl.args[i].shape
    } else if decl.variadic {
        decl.args.last().map(|a| a.shape).unwrap_or(ArgShape::Scalar)
    } else {
        ArgShape::Scalar
    }
}

fn const_value(e: &Expr, registry: &AtomRegistry) -> Option<f64> {
    match eval(e, &Assignment::new(), &EvalCtx::new(registry)) {
        Ok(Value::Num(v)) => Some(v),
        _ => None,
    }
}

/// Build the atom tree for one component.
///
/// `required` is `convex` for objectives and `concave` for constraints;
/// variable conditions of matched atoms must be discharged against
/// `available_conds`, background conditions against `assumptions`. Returns
/// the tree and the names of the constraints consumed as conditions.
pub fn build_tree(
    e: &Expr,
    required: Role,
    available_conds: &[Constraint],
    assumptions: &[Constraint],
    vars: &[VarDecl],
    registry: &AtomRegistry,
    component: &str,
) -> Result<(AtomTree, BTreeSet<String>), CanonError> {
    let mut b = TreeBuilder {
        vars,
        varset: vars.iter().map(|v| v.name.clone()).collect(),
        registry,
        conds: CondPool::new(available_conds, vars, registry),
        bconds: CondPool::new(assumptions, &[], registry),
        consumed: BTreeSet::new(),
    };
    let tree = b.build(e, required, ArgShape::Scalar, component)?;
    Ok((tree, b.consumed))
}

/// Re-check the role propagation table on a finished tree (test support).
pub fn check_tree_roles(tree: &AtomTree, registry: &AtomRegistry, vars: &[VarDecl]) -> bool {
    fn go(t: &AtomTree, registry: &AtomRegistry, vars: &[VarDecl]) -> bool {
        match &t.payload {
            TreePayload::Leaf => true,
            TreePayload::Node {
                atom,
                dim,
                children,
            } => {
                let decl = match registry.resolve(atom, *dim) {
                    Some(d) => d,
                    None => return false,
                };
                if decl.curvature != Curvature::Affine && decl.curvature != t.role {
                    return false;
                }
                for (i, c) in children.iter().enumerate() {
                    let expected = match decl.mono(i) {
                        Monotonicity::Increasing => t.role,
                        Monotonicity::Decreasing => t.role.negate(),
                        Monotonicity::Neither => Curvature::Affine,
                        Monotonicity::Auxiliary => {
                            if !matches!(c.payload, TreePayload::Leaf) {
                                return false;
                            }
                            Curvature::Affine
                        }
                    };
                    // Sign-resolved scalar multiples may legitimately differ.
                    let flipped = decl.sign_sensitive().map(|(_, a)| a) == Some(i);
                    if c.role != expected && !flipped {
                        return false;
                    }
                    if !go(c, registry, vars) {
                        return false;
                    }
                }
                true
            }
        }
    }
    go(tree, registry, vars)
}

// ---------------------------------------------------------------------------
// Canonicalization

/// The conic reduced problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedProblem {
    pub original_vars: Vec<VarDecl>,
    pub fresh_vars: Vec<VarDecl>,
    pub objective: Expr,
    pub constraints: Vec<Constraint>,
    pub provenance: Vec<(String, Provenance)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Provenance {
    Original(String),
    AtomNode { path: String, atom: String },
}

impl ReducedProblem {
    pub fn all_vars(&self) -> Vec<VarDecl> {
        self.original_vars
            .iter()
            .chain(self.fresh_vars.iter())
            .cloned()
            .collect()
    }

    /// View the reduced problem as an ordinary (minimization) problem so it
    /// can be printed, parsed and sampled.
    pub fn to_problem(&self) -> Problem {
        Problem {
            vars: self.all_vars(),
            params: Vec::new(),
            assumptions: Vec::new(),
            sense: Sense::Minimize,
            objective: self.objective.clone(),
            constraints: self.constraints.clone(),
        }
    }
}

/// Executable strong-equivalence witness between a problem and its
/// canonicalization: the forward map assigns every fresh variable an
/// interpretation over the original variables; the backward map is the
/// projection onto the original variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reduction {
    pub original_vars: Vec<VarDecl>,
    pub fresh_vars: Vec<VarDecl>,
    /// Interpretation expression per fresh variable, over original
    /// variables only, in allocation order.
    pub forward: Vec<(String, Expr)>,
}

impl Reduction {
    /// Extend an assignment of the original variables with the
    /// interpretations of every fresh variable.
    pub fn forward_apply(
        &self,
        a: &Assignment,
        registry: &AtomRegistry,
    ) -> Result<Assignment, EvalError> {
        let ctx = EvalCtx::new(registry);
        let mut out = a.clone();
        for (name, interp) in &self.forward {
            match eval(interp, a, &ctx)? {
                Value::Num(v) => out.set_num(name, v),
                Value::Mat(m) => {
                    let sym = crate::linalg::SymMat::from_dense(&m).ok_or_else(|| {
                        EvalError::ShapeMismatch {
                            what: "interpretation is not square".to_string(),
                            path: "root".to_string(),
                        }
                    })?;
                    out.set_mat(name, sym);
                }
                _ => {
                    return Err(EvalError::ShapeMismatch {
                        what: "interpretation must be numeric".to_string(),
                        path: "root".to_string(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Project an assignment of the reduced problem onto the original
    /// variables. Exact: no arithmetic is performed.
    pub fn backward_apply(&self, a: &Assignment) -> Assignment {
        a.project(&self.original_vars).unwrap_or_else(Assignment::new)
    }
}

/// Full canonicalization artifact, including the trees and per-node reduced
/// expressions used by introspection and the verification harness.
#[derive(Debug, Clone)]
pub struct Canonicalized {
    pub reduced: ReducedProblem,
    pub reduction: Reduction,
    pub objective_tree: AtomTree,
    /// Trees of surviving constraints (consumed or failed constraints that
    /// were dropped carry `None`).
    pub constraint_trees: Vec<(String, Option<AtomTree>)>,
    /// Names of original constraints dropped because an atom required them
    /// as a condition.
    pub consumed: Vec<String>,
    /// Reduced expression per tree node id.
    pub rexprs: BTreeMap<String, Expr>,
}

/// Canonicalize a problem to conic form with its equivalence witness.
pub fn canonicalize(
    p: &Problem,
    registry: &AtomRegistry,
) -> Result<(ReducedProblem, Reduction), CanonError> {
    canonicalize_full(p, registry).map(|c| (c.reduced, c.reduction))
}

pub fn canonicalize_full(p: &Problem, registry: &AtomRegistry) -> Result<Canonicalized, CanonError> {
    p.validate(registry).map_err(CanonError::Model)?;
    {
        let mut params = BTreeSet::new();
        p.objective.free_params(&mut params);
        for c in &p.constraints {
            c.body.free_params(&mut params);
        }
        if let Some(name) = params.into_iter().next() {
            return Err(CanonError::UnboundParameter { name });
        }
    }
    let pn = normalize_sense(p);

    // Build all component trees; constraint failures are tolerated when the
    // constraint ends up consumed as some atom's condition.
    let (obj_tree, mut consumed) = build_tree(
        &pn.objective,
        Curvature::Convex,
        &pn.constraints,
        &pn.assumptions,
        &pn.vars,
        registry,
        "obj",
    )?;
    let mut trees: Vec<(String, Result<AtomTree, CanonError>)> = Vec::new();
    for c in &pn.constraints {
        let r = build_tree(
            &c.body,
            Curvature::Concave,
            &pn.constraints,
            &pn.assumptions,
            &pn.vars,
            registry,
            &c.name,
        );
        match r {
            Ok((t, used)) => {
                consumed.extend(used);
                trees.push((c.name.clone(), Ok(t)));
            }
            Err(e) => trees.push((c.name.clone(), Err(e))),
        }
    }
    // A constraint may fail to build only if something else consumed it.
    for (name, r) in &trees {
        if let Err(e) = r {
            if !consumed.contains(name) {
                return Err(e.clone());
            }
        }
    }
    // Strict constraints must be consumed: they have no conic form.
    for c in &pn.constraints {
        if consumed.contains(&c.name) {
            continue;
        }
        if let Expr::Apply(f, _) = &c.body {
            if let Some(d) = registry.resolve(f, None) {
                if d.strict {
                    return Err(CanonError::StrictConstraintSurvives {
                        name: c.name.clone(),
                    });
                }
            }
        }
    }

    // Fresh variable allocation: objective tree first, then constraints in
    // declaration order, depth-first pre-order within each tree.
    let mut ordered_trees: Vec<&AtomTree> = Vec::new();
    ordered_trees.push(&obj_tree);
    for (name, r) in &trees {
        if consumed.contains(name) {
            continue;
        }
        if let Ok(t) = r {
            ordered_trees.push(t);
        }
    }
    let mut counter = 0usize;
    let mut fresh_vars: Vec<VarDecl> = Vec::new();
    // node id -> (formal impl var name -> fresh variable expr)
    let mut node_vars: BTreeMap<String, BTreeMap<String, Expr>> = BTreeMap::new();
    for tree in &ordered_trees {
        let mut nodes = Vec::new();
        tree.walk(&mut nodes);
        for n in nodes {
            if let TreePayload::Node { atom, dim, .. } = &n.payload {
                let decl = registry
                    .resolve(atom, *dim)
                    .ok_or_else(|| CanonError::Internal(format!("unresolvable atom `{atom}`")))?;
                if decl.boolean || decl.impl_vars.is_empty() {
                    continue;
                }
                let mut map = BTreeMap::new();
                for (formal, shape) in &decl.impl_vars {
                    let fresh = format!("t.{counter}");
                    counter += 1;
                    fresh_vars.push(VarDecl {
                        name: fresh.clone(),
                        shape: *shape,
                    });
                    map.insert(formal.clone(), Expr::Var(fresh));
                }
                node_vars.insert(n.id.clone(), map);
            }
        }
    }

    // Reduced expressions, bottom-up.
    let mut rexprs: BTreeMap<String, Expr> = BTreeMap::new();
    for tree in &ordered_trees {
        compute_rexprs(tree, registry, &node_vars, &mut rexprs)?;
    }

    // Assemble constraints: translated originals first, then the graph
    // constraints of every internal node.
    let empty = BTreeMap::new();
    let mut constraints: Vec<Constraint> = Vec::new();
    let mut provenance: Vec<(String, Provenance)> = Vec::new();
    for (name, r) in &trees {
        if consumed.contains(name) {
            continue;
        }
        let tree = match r {
            Ok(t) => t,
            Err(_) => continue,
        };
        let (atom, children) = match &tree.payload {
            TreePayload::Node {
                atom, children, ..
            } => (atom.clone(), children),
            TreePayload::Leaf => {
                return Err(CanonError::Internal(format!(
                    "constraint `{name}` built as a leaf"
                )))
            }
        };
        let decl = registry
            .resolve(&atom, None)
            .ok_or_else(|| CanonError::Internal("constraint root not found".to_owned()))?;
        if !decl.boolean {
            return Err(CanonError::Internal(format!(
                "constraint `{name}` is not rooted in a predicate"
            )));
        }
        let child_rexprs: Vec<Expr> = children
            .iter()
            .map(|c| rexprs.get(&c.id).cloned().unwrap())
            .collect();
        let new_name = format!("{name}'");
        for cf in &decl.impl_constraints {
            let body = decl.instantiate(cf, &child_rexprs, &empty);
            constraints.push(Constraint {
                name: new_name.clone(),
                body,
            });
            provenance.push((new_name.clone(), Provenance::Original(name.clone())));
        }
    }
    let mut graph_idx = pn.constraints.len();
    for tree in &ordered_trees {
        let mut nodes = Vec::new();
        tree.walk(&mut nodes);
        for n in nodes {
            let (atom, dim, children) = match &n.payload {
                TreePayload::Node {
                    atom,
                    dim,
                    children,
                } => (atom, dim, children),
                TreePayload::Leaf => continue,
            };
            let decl = registry.resolve(atom, *dim).unwrap();
            if decl.boolean || decl.impl_constraints.is_empty() {
                continue;
            }
            let child_rexprs: Vec<Expr> = children
                .iter()
                .map(|c| rexprs.get(&c.id).cloned().unwrap())
                .collect();
            let vars_map = node_vars.get(&n.id).cloned().unwrap_or_default();
            graph_idx += 1;
            let cname = format!("c{graph_idx}'");
            for cf in &decl.impl_constraints {
                let body = decl.instantiate(cf, &child_rexprs, &vars_map);
                constraints.push(Constraint {
                    name: cname.clone(),
                    body,
                });
                provenance.push((
                    cname.clone(),
                    Provenance::AtomNode {
                        path: n.id.clone(),
                        atom: atom.clone(),
                    },
                ));
            }
        }
    }

    let objective = rexprs
        .get(&obj_tree.id)
        .cloned()
        .ok_or_else(|| CanonError::Internal("missing objective rexpr".to_owned()))?;

    let reduced = ReducedProblem {
        original_vars: pn.vars.clone(),
        fresh_vars: fresh_vars.clone(),
        objective,
        constraints,
        provenance,
    };
    check_conic(&reduced)?;

    // Forward interpretations: solution expressions instantiated at child
    // reduced expressions, with nested fresh variables substituted by their
    // own interpretations (children are processed before parents).
    let mut interp: BTreeMap<String, Expr> = BTreeMap::new();
    let mut forward: Vec<(String, Expr)> = Vec::new();
    for tree in &ordered_trees {
        compute_interps(tree, registry, &node_vars, &rexprs, &mut interp, &mut forward)?;
    }
    // Allocation order.
    forward.sort_by_key(|(name, _)| {
        fresh_vars
            .iter()
            .position(|v| &v.name == name)
            .unwrap_or(usize::MAX)
    });

    let reduction = Reduction {
        original_vars: pn.vars.clone(),
        fresh_vars,
        forward,
    };

    Ok(Canonicalized {
        reduced,
        reduction,
        objective_tree: obj_tree,
        constraint_trees: trees
            .into_iter()
            .map(|(n, r)| {
                let keep = !consumed.contains(&n);
                (n, r.ok().filter(|_| keep))
            })
            .collect(),
        consumed: consumed.into_iter().collect(),
        rexprs,
    })
}

fn compute_rexprs(
    t: &AtomTree,
    registry: &AtomRegistry,
    node_vars: &BTreeMap<String, BTreeMap<String, Expr>>,
    out: &mut BTreeMap<String, Expr>,
) -> Result<(), CanonError> {
    match &t.payload {
        TreePayload::Leaf => {
            out.insert(t.id.clone(), t.oexpr.clone());
        }
        TreePayload::Node {
            atom,
            dim,
            children,
        } => {
            for c in children {
                compute_rexprs(c, registry, node_vars, out)?;
            }
            let decl = registry
                .resolve(atom, *dim)
                .ok_or_else(|| CanonError::Internal(format!("unresolvable atom `{atom}`")))?;
            let child_rexprs: Vec<Expr> = children
                .iter()
                .map(|c| out.get(&c.id).cloned().unwrap())
                .collect();
            let vars_map = node_vars.get(&t.id).cloned().unwrap_or_default();
            let rexpr = decl.instantiate(&decl.impl_objective, &child_rexprs, &vars_map);
            out.insert(t.id.clone(), rexpr);
        }
    }
    Ok(())
}

fn compute_interps(
    t: &AtomTree,
    registry: &AtomRegistry,
    node_vars: &BTreeMap<String, BTreeMap<String, Expr>>,
    rexprs: &BTreeMap<String, Expr>,
    interp: &mut BTreeMap<String, Expr>,
    forward: &mut Vec<(String, Expr)>,
) -> Result<(), CanonError> {
    if let TreePayload::Node {
        atom,
        dim,
        children,
    } = &t.payload
    {
        for c in children {
            compute_interps(c, registry, node_vars, rexprs, interp, forward)?;
        }
        if let Some(vars_map) = node_vars.get(&t.id) {
            let decl = registry
                .resolve(atom, *dim)
                .ok_or_else(|| CanonError::Internal(format!("unresolvable atom `{atom}`")))?;
            // Child reduced expressions with nested fresh variables replaced
            // by their interpretations (already computed bottom-up).
            let child_interp: Vec<Expr> = children
                .iter()
                .map(|c| rexprs.get(&c.id).cloned().unwrap().subst_vars(interp))
                .collect();
            let empty = BTreeMap::new();
            for (formal, sol) in &decl.solution {
                let fresh_name = match vars_map.get(formal) {
                    Some(Expr::Var(n)) => n.clone(),
                    _ => {
                        return Err(CanonError::Internal(format!(
                            "missing fresh variable for `{formal}`"
                        )))
                    }
                };
                let e = decl.instantiate(sol, &child_interp, &empty);
                interp.insert(fresh_name.clone(), e.clone());
                forward.push((fresh_name, e));
            }
        }
    }
    Ok(())
}

/// Conic-form postcondition: every constraint is a cone over affine
/// arguments and the objective is affine.
fn check_conic(q: &ReducedProblem) -> Result<(), CanonError> {
    let vars = q.all_vars();
    if affine_form(&q.objective, &vars).into_form().is_none() {
        return Err(CanonError::Internal(
            "reduced objective is not affine".to_owned(),
        ));
    }
    for c in &q.constraints {
        let (kind, args) = match &c.body {
            Expr::Apply(f, args) => match ConeKind::from_atom(f) {
                Some(k) => (k, args),
                None => {
                    return Err(CanonError::Internal(format!(
                        "reduced constraint `{}` is not a cone",
                        c.name
                    )))
                }
            },
            _ => {
                return Err(CanonError::Internal(format!(
                    "reduced constraint `{}` is not an application",
                    c.name
                )))
            }
        };
        let scalar_ok = |e: &Expr| affine_form(e, &vars).into_form().is_some();
        let ok = match kind {
            ConeKind::Zero | ConeKind::PosOrth => scalar_ok(&args[0]),
            ConeKind::SecondOrder => scalar_ok(&args[0]) && vec_ok(&args[1], &vars),
            ConeKind::RotatedSecondOrder => {
                scalar_ok(&args[0]) && scalar_ok(&args[1]) && vec_ok(&args[2], &vars)
            }
            ConeKind::Exp => args.iter().all(|a| scalar_ok(a)),
            ConeKind::Psd => matrix_affine_entries(&args[0], &vars).is_some(),
        };
        if !ok {
            return Err(CanonError::Internal(format!(
                "reduced constraint `{}` has non-affine cone arguments",
                c.name
            )));
        }
    }
    Ok(())
}

fn vec_ok(e: &Expr, vars: &[VarDecl]) -> bool {
    match e {
        Expr::Apply(f, args) if f == "vec" => args
            .iter()
            .all(|a| affine_form(a, vars).into_form().is_some()),
        other => affine_form(other, vars).into_form().is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_problem;
    use crate::printer::print_problem;

    fn reg() -> AtomRegistry {
        AtomRegistry::builtin()
    }

    const SO1: &str = "optimization (x y : R)
  maximize sqrt (x - y)
  subject to
    c1 : y = 2*x - 3
    c2 : x^2 <= 2
    c3 : 0 <= x - y
";

    #[test]
    fn tree_for_neg_sqrt() {
        let registry = reg();
        let p = parse_problem(SO1, &registry).unwrap();
        let pn = normalize_sense(&p);
        let (tree, consumed) = build_tree(
            &pn.objective,
            Curvature::Convex,
            &pn.constraints,
            &pn.assumptions,
            &pn.vars,
            &registry,
            "obj",
        )
        .unwrap();
        assert!(consumed.contains("c3"));
        // neg (affine, in the role of convex) -> sqrt (concave) -> leaf.
        assert_eq!(tree.role, Curvature::Convex);
        match &tree.payload {
            TreePayload::Node { atom, children, .. } => {
                assert_eq!(atom, "neg");
                let sqrt = &children[0];
                assert_eq!(sqrt.id, "obj.1");
                assert_eq!(sqrt.role, Curvature::Concave);
                match &sqrt.payload {
                    TreePayload::Node { atom, children, .. } => {
                        assert_eq!(atom, "sqrt");
                        assert!(matches!(children[0].payload, TreePayload::Leaf));
                    }
                    _ => panic!("sqrt should be a node"),
                }
            }
            _ => panic!("expected neg node"),
        }
        assert!(check_tree_roles(&tree, &registry, &pn.vars));
    }

    #[test]
    fn undischarged_condition_is_reported() {
        let registry = reg();
        let p = parse_problem("optimization (x : R) maximize log x", &registry).unwrap();
        let pn = normalize_sense(&p);
        let err = build_tree(
            &pn.objective,
            Curvature::Convex,
            &pn.constraints,
            &pn.assumptions,
            &pn.vars,
            &registry,
            "obj",
        )
        .unwrap_err();
        assert!(matches!(err, CanonError::UndischargedCondition { .. }));
    }

    #[test]
    fn le_tree_assigns_sides() {
        let registry = reg();
        let p = parse_problem(
            "optimization (x : R) minimize x subject to c2 : x^2 <= 2",
            &registry,
        )
        .unwrap();
        let (tree, _) = build_tree(
            &p.constraints[0].body,
            Curvature::Concave,
            &p.constraints,
            &[],
            &p.vars,
            &registry,
            "c2",
        )
        .unwrap();
        match &tree.payload {
            TreePayload::Node { atom, children, .. } => {
                assert_eq!(atom, "le");
                assert_eq!(children[0].role, Curvature::Convex);
                match &children[0].payload {
                    TreePayload::Node { atom, .. } => assert_eq!(atom, "square"),
                    _ => panic!("lhs should be the square node"),
                }
                assert!(matches!(children[1].payload, TreePayload::Leaf));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn canonicalize_worked_example() {
        let registry = reg();
        let p = parse_problem(SO1, &registry).unwrap();
        let (q, red) = canonicalize(&p, &registry).unwrap();
        assert_eq!(q.original_vars.len(), 2);
        assert_eq!(q.fresh_vars.len(), 2);
        assert_eq!(q.fresh_vars[0].name, "t.0");
        assert_eq!(q.fresh_vars[1].name, "t.1");
        assert_eq!(q.constraints.len(), 4);
        assert_eq!(q.objective, Expr::neg(Expr::var("t.0")));
        let printed: Vec<String> = q
            .constraints
            .iter()
            .map(|c| format!("{} : {}", c.name, crate::printer::print_expr(&c.body)))
            .collect();
        assert_eq!(printed[0], "c1' : zeroCone (2 * x - 3 - y)");
        assert_eq!(printed[1], "c2' : posOrthCone (2 - t.1)");
        assert_eq!(printed[2], "c4' : rotatedSoCone 0.5 (x - y) ![t.0]");
        assert_eq!(printed[3], "c5' : rotatedSoCone t.1 0.5 ![x]");
        // Forward map: (x, y) -> (x, y, sqrt(x - y), x^2).
        assert_eq!(red.forward.len(), 2);
        assert_eq!(
            red.forward[0].1,
            Expr::apply("sqrt", alloc::vec![Expr::sub(Expr::var("x"), Expr::var("y"))])
        );
        assert_eq!(
            red.forward[1].1,
            Expr::apply("square", alloc::vec![Expr::var("x")])
        );
    }

    #[test]
    fn canonicalized_problem_reparses() {
        let registry = reg();
        let p = parse_problem(SO1, &registry).unwrap();
        let (q, _) = canonicalize(&p, &registry).unwrap();
        let printed = print_problem(&q.to_problem());
        let back = parse_problem(&printed, &registry).unwrap();
        assert_eq!(back, q.to_problem());
    }

    #[test]
    fn already_conic_is_unchanged() {
        let registry = reg();
        let p = parse_problem(
            "optimization (x : R) minimize x subject to c : posOrthCone x",
            &registry,
        )
        .unwrap();
        let (q, red) = canonicalize(&p, &registry).unwrap();
        assert!(q.fresh_vars.is_empty());
        assert_eq!(q.constraints.len(), 1);
        assert_eq!(q.constraints[0].body, p.constraints[0].body);
        assert!(red.forward.is_empty());
        let mut a = Assignment::new();
        a.set_num("x", 1.5);
        let fwd = red.forward_apply(&a, &registry).unwrap();
        assert_eq!(fwd, a);
        assert_eq!(red.backward_apply(&fwd), a);
    }

    #[test]
    fn exp_objective_example() {
        let registry = reg();
        let p = parse_problem(
            "optimization (x : R) minimize exp x subject to c : 1 <= x",
            &registry,
        )
        .unwrap();
        let (q, red) = canonicalize(&p, &registry).unwrap();
        assert_eq!(q.fresh_vars.len(), 1);
        assert_eq!(q.objective, Expr::var("t.0"));
        let bodies: Vec<String> = q
            .constraints
            .iter()
            .map(|c| crate::printer::print_expr(&c.body))
            .collect();
        assert_eq!(bodies[0], "posOrthCone (x - 1)");
        assert_eq!(bodies[1], "expCone x 1 t.0");
        assert_eq!(
            red.forward[0].1,
            Expr::apply("exp", alloc::vec![Expr::var("x")])
        );
    }

    #[test]
    fn forward_apply_matches_hand_values() {
        let registry = reg();
        let p = parse_problem(SO1, &registry).unwrap();
        let (_, red) = canonicalize(&p, &registry).unwrap();
        let mut a = Assignment::new();
        a.set_num("x", 0.0);
        a.set_num("y", -3.0);
        let fwd = red.forward_apply(&a, &registry).unwrap();
        assert!((fwd.num("t.0").unwrap() - 1.7320508).abs() < 1e-6);
        assert_eq!(fwd.num("t.1").unwrap(), 0.0);
        // Paper solve answer: t.0 = 2.101003 at the optimum.
        let mut b = Assignment::new();
        b.set_num("x", -1.414214);
        b.set_num("y", -5.828427);
        let fwd = red.forward_apply(&b, &registry).unwrap();
        assert!((fwd.num("t.0").unwrap() - 2.101003).abs() < 1e-6);
        // Backward of forward is the identity, exactly.
        assert_eq!(red.backward_apply(&fwd), b);
    }

    #[test]
    fn strict_constraint_must_be_consumed() {
        let registry = reg();
        // The strict constraint discharges log's condition and disappears.
        let ok = parse_problem(
            "optimization (x : R) maximize log x subject to h : 0 < x",
            &registry,
        )
        .unwrap();
        let (q, _) = canonicalize(&ok, &registry).unwrap();
        assert_eq!(q.constraints.len(), 1); // just the exp cone
        // A strict constraint nothing consumes is an error.
        let bad = parse_problem(
            "optimization (x : R) minimize x subject to h : 0 < x",
            &registry,
        )
        .unwrap();
        assert!(matches!(
            canonicalize(&bad, &registry),
            Err(CanonError::StrictConstraintSurvives { .. })
        ));
    }

    #[test]
    fn unbound_parameter_is_rejected() {
        let registry = reg();
        let p = parse_problem(
            "parameters (a : R)
optimization (x : R) minimize a*x subject to c : 0 <= x",
            &registry,
        )
        .unwrap();
        assert!(matches!(
            canonicalize(&p, &registry),
            Err(CanonError::UnboundParameter { .. })
        ));
        let mut env = Assignment::new();
        env.set_num("a", 2.0);
        assert!(canonicalize(&p.bind_params(&env), &registry).is_ok());
    }

    #[test]
    fn negative_scale_flips_direction() {
        let registry = reg();
        // -2 * sqrt(x): smul with a negative constant must flip the
        // required role of its argument, keeping the whole objective convex
        // after normalize_sense wraps the maximize.
        let p = parse_problem(
            "optimization (x : R)
  minimize -2 * sqrt x
  subject to
    c : 0 <= x",
            &registry,
        )
        .unwrap();
        let (q, _) = canonicalize(&p, &registry).unwrap();
        assert_eq!(q.fresh_vars.len(), 1);
        assert!(check_tree_roles(
            &canonicalize_full(&p, &registry).unwrap().objective_tree,
            &registry,
            &p.vars
        ));
    }

    #[test]
    fn determinism_byte_identical() {
        let registry = reg();
        let p = parse_problem(SO1, &registry).unwrap();
        let (q1, _) = canonicalize(&p, &registry).unwrap();
        let (q2, _) = canonicalize(&p, &registry).unwrap();
        assert_eq!(
            print_problem(&q1.to_problem()),
            print_problem(&q2.to_problem())
        );
    }
}
