//! Sample-based checking of the four per-atom properties: solution
//! correctness, solution feasibility, optimality, and condition
//! elimination.
//!
//! The checks replace formal proofs with randomized evaluation: argument
//! tuples are drawn from boxes (rejected against the atom's conditions),
//! implementation-variable tuples are drawn from the graph constraints,
//! and directed perturbations follow each argument's monotonicity
//! (arguments tagged neither or auxiliary are held exactly fixed).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::atom::{ArgShape, AtomDecl, AtomRegistry, Curvature, Monotonicity};
use crate::eval::{constraint_violation, eval, EvalCtx, Value};
use crate::expr::{Assignment, Expr, Shape};
use crate::linalg::{Mat, SymMat};
use crate::num;
use crate::verify::{SampleConfig, VerifyError};

#[derive(Debug, Clone, Serialize)]
pub struct ObligationWitness {
    /// Sampled argument values, keyed by formal argument name.
    pub args: Vec<(String, Value)>,
    /// Implementation-variable values (optimality/condition-elimination).
    pub impl_vars: Vec<(String, Value)>,
    /// Perturbed argument values.
    pub perturbed: Vec<(String, Value)>,
    pub violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObligationResult {
    pub name: &'static str,
    pub passed: bool,
    pub samples: usize,
    pub worst_violation: f64,
    pub witness: Option<ObligationWitness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObligationReport {
    pub atom: String,
    pub dim: Option<usize>,
    pub results: Vec<ObligationResult>,
    pub exhausted: bool,
}

impl ObligationReport {
    pub fn all_passed(&self) -> bool {
        !self.exhausted && self.results.iter().all(|r| r.passed)
    }

    pub fn result(&self, name: &str) -> Option<&ObligationResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

/// One sampled argument tuple, in both expression and value form.
struct ArgSample {
    exprs: Vec<Expr>,
    values: Vec<(String, Value)>,
    env: Assignment,
}

struct Sampler<'a> {
    decl: &'a AtomDecl,
    registry: &'a AtomRegistry,
    cfg: &'a SampleConfig,
    feas_tol: f64,
}

impl<'a> Sampler<'a> {
    fn ctx(&self) -> EvalCtx<'a> {
        EvalCtx::with_tol(self.registry, self.feas_tol)
    }

    /// Positive-definite argument sampling: a random factor L with entries
    /// in [-2, 2], used as L L^T + eps I.
    fn sample_pd_matrix(&self, n: usize, rng: &mut ChaCha8Rng) -> SymMat {
        let mut l = Mat::zeros(n, n);
        for v in l.data.iter_mut() {
            *v = rng.gen_range(-2.0..=2.0);
        }
        let a = l.matmul(&l.transpose()).unwrap();
        let mut s = SymMat::from_dense(&a).unwrap();
        for i in 0..n {
            let v = s.at(i, i) + 1e-3;
            s.set(i, i, v);
        }
        s
    }

    fn matrix_dim(&self) -> usize {
        self.decl
            .impl_vars
            .iter()
            .find_map(|(_, s)| match s {
                Shape::SymMatrix(n) => Some(*n),
                Shape::Scalar => None,
            })
            .unwrap_or(2)
    }

    fn wants_pd(&self, arg: &str) -> bool {
        self.decl.vconds.iter().any(|c| match c {
            Expr::Apply(f, args) => f == "posdef" && args[0] == Expr::var(arg),
            _ => false,
        })
    }

    /// Draw one argument tuple satisfying the atom's conditions; for
    /// predicate atoms `require_member` additionally conditions on the
    /// predicate itself being true.
    fn sample_args(&self, rng: &mut ChaCha8Rng, require_member: bool) -> Option<ArgSample> {
        let ctx = self.ctx();
        'outer: for _ in 0..200 {
            let mut exprs = Vec::new();
            let mut values = Vec::new();
            let mut env = Assignment::new();
            for (i, arg) in self.decl.args.iter().enumerate() {
                let (lo, hi) = self.cfg.box_for(&arg.name);
                match arg.shape {
                    ArgShape::Scalar => {
                        let v = rng.gen_range(lo..=hi);
                        exprs.push(Expr::Const(v));
                        values.push((arg.name.clone(), Value::Num(v)));
                    }
                    ArgShape::Vector => {
                        let k = 2;
                        let vs: Vec<f64> = (0..k).map(|_| rng.gen_range(lo..=hi)).collect();
                        exprs.push(Expr::apply(
                            "vec",
                            vs.iter().map(|v| Expr::Const(*v)).collect(),
                        ));
                        values.push((arg.name.clone(), Value::Vector(vs)));
                    }
                    ArgShape::Matrix => {
                        let n = self.matrix_dim();
                        let m = if self.wants_pd(&arg.name) {
                            self.sample_pd_matrix(n, rng)
                        } else {
                            let mut m = SymMat::zeros(n);
                            for (i, j) in SymMat::coords(n) {
                                m.set(i, j, rng.gen_range(lo..=hi));
                            }
                            m
                        };
                        env.set_mat(&arg.name, m.clone());
                        exprs.push(Expr::var(&arg.name));
                        values.push((arg.name.clone(), Value::Mat(m.to_dense())));
                    }
                }
                let _ = i;
            }
            let empty = BTreeMap::new();
            for cond in self.decl.vconds.iter().chain(self.decl.bconds.iter()) {
                let inst = self.decl.instantiate(cond, &exprs, &empty);
                match eval(&inst, &env, &ctx) {
                    Ok(Value::Bool(true)) => {}
                    _ => continue 'outer,
                }
            }
            if require_member && self.decl.boolean {
                let inst = self.decl.instantiate(&self.decl.body, &exprs, &empty);
                match eval(&inst, &env, &ctx) {
                    Ok(Value::Bool(true)) => {}
                    _ => continue 'outer,
                }
            }
            return Some(ArgSample {
                exprs,
                values,
                env,
            });
        }
        None
    }

    /// Evaluate the solution expressions at the sampled arguments.
    fn solution_values(&self, s: &ArgSample) -> Option<(BTreeMap<String, Expr>, Assignment, Vec<(String, Value)>)> {
        let ctx = self.ctx();
        let empty = BTreeMap::new();
        let mut impl_map = BTreeMap::new();
        let mut env = s.env.clone();
        let mut values = Vec::new();
        for (name, sol) in &self.decl.solution {
            let inst = self.decl.instantiate(sol, &s.exprs, &empty);
            match eval(&inst, &s.env, &ctx) {
                Ok(Value::Num(v)) => {
                    env.set_num(name, v);
                    values.push((name.clone(), Value::Num(v)));
                }
                Ok(Value::Mat(m)) => {
                    let sym = SymMat::from_dense(&m)?;
                    env.set_mat(name, sym);
                    values.push((name.clone(), Value::Mat(m)));
                }
                _ => return None,
            }
            impl_map.insert(name.clone(), Expr::var(name));
        }
        Some((impl_map, env, values))
    }

    /// Draw implementation-variable values satisfying the graph
    /// constraints at the given arguments.
    fn sample_impl_vars(
        &self,
        s: &ArgSample,
        rng: &mut ChaCha8Rng,
    ) -> Option<(BTreeMap<String, Expr>, Assignment, Vec<(String, Value)>)> {
        if self.decl.impl_vars.is_empty() {
            return Some((BTreeMap::new(), s.env.clone(), Vec::new()));
        }
        if self.decl.name == "logdet" {
            return self.sample_logdet_impl(s, rng);
        }
        let ctx = self.ctx();
        let impl_map: BTreeMap<String, Expr> = self
            .decl
            .impl_vars
            .iter()
            .map(|(n, _)| (n.clone(), Expr::var(n)))
            .collect();
        'outer: for _ in 0..200 {
            let mut env = s.env.clone();
            let mut values = Vec::new();
            for (name, shape) in &self.decl.impl_vars {
                match shape {
                    Shape::Scalar => {
                        let v = rng.gen_range(-10.0..=10.0);
                        env.set_num(name, v);
                        values.push((name.clone(), Value::Num(v)));
                    }
                    Shape::SymMatrix(n) => {
                        let mut m = SymMat::zeros(*n);
                        for (i, j) in SymMat::coords(*n) {
                            m.set(i, j, rng.gen_range(-10.0..=10.0));
                        }
                        env.set_mat(name, m.clone());
                        values.push((name.clone(), Value::Mat(m.to_dense())));
                    }
                }
            }
            for c in &self.decl.impl_constraints {
                let inst = self.decl.instantiate(c, &s.exprs, &impl_map);
                match constraint_violation(&inst, &env, &ctx) {
                    Ok(v) if v <= 0.0 => {}
                    _ => continue 'outer,
                }
            }
            return Some((impl_map, env, values));
        }
        None
    }

    /// Feasible points of the log-det graph: scale the witness matrix by
    /// (1 - u) and push each t_i below log of the scaled diagonal. The
    /// scaled block stays positive semidefinite because the Schur
    /// complement becomes u(1-u) D.
    fn sample_logdet_impl(
        &self,
        s: &ArgSample,
        rng: &mut ChaCha8Rng,
    ) -> Option<(BTreeMap<String, Expr>, Assignment, Vec<(String, Value)>)> {
        let (impl_map, sol_env, _) = self.solution_values(s)?;
        let u: f64 = rng.gen_range(0.0..=0.5);
        let mut env = s.env.clone();
        let mut values = Vec::new();
        let y = match sol_env.get("Y") {
            Some(crate::expr::Binding::Mat(m)) => m.clone(),
            _ => return None,
        };
        let mut scaled = y.clone();
        for v in scaled.upper_entries_mut() {
            *v *= 1.0 - u;
        }
        env.set_mat("Y", scaled.clone());
        values.push(("Y".to_string(), Value::Mat(scaled.to_dense())));
        for (name, shape) in &self.decl.impl_vars {
            if let Shape::Scalar = shape {
                let i: usize = name
                    .strip_prefix('t')
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(0);
                let eta: f64 = rng.gen_range(0.0..=1.0);
                let d = scaled.at(i, i);
                if d <= 0.0 {
                    return None;
                }
                let v = num::ln(d) - eta;
                env.set_num(name, v);
                values.push((name.clone(), Value::Num(v)));
            }
        }
        Some((impl_map, env, values))
    }

    /// Perturb arguments along their monotonicity direction. `widen` is
    /// +1 for the concave direction (a' above a) and -1 for the convex
    /// direction (a' below a).
    fn perturb(
        &self,
        s: &ArgSample,
        monos: &[Monotonicity],
        widen: f64,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<Expr>, Assignment, Vec<(String, Value)>) {
        let mut exprs = Vec::new();
        let mut env = s.env.clone();
        let mut values = Vec::new();
        for (i, arg) in self.decl.args.iter().enumerate() {
            match (&s.exprs[i], monos[i]) {
                (Expr::Const(v), Monotonicity::Increasing) => {
                    let d: f64 = rng.gen_range(0.0..=1.0);
                    let nv = v + widen * d;
                    exprs.push(Expr::Const(nv));
                    values.push((arg.name.clone(), Value::Num(nv)));
                }
                (Expr::Const(v), Monotonicity::Decreasing) => {
                    let d: f64 = rng.gen_range(0.0..=1.0);
                    let nv = v - widen * d;
                    exprs.push(Expr::Const(nv));
                    values.push((arg.name.clone(), Value::Num(nv)));
                }
                (e, _) => {
                    // Neither and auxiliary arguments stay syntactically
                    // identical; so do vectors and matrices (their
                    // monotonicities are all neither among the built-ins).
                    exprs.push(e.clone());
                    if let Some((n, v)) = s.values.get(i) {
                        values.push((n.clone(), v.clone()));
                    }
                    let _ = &mut env;
                }
            }
        }
        (exprs, env, values)
    }
}

fn rel_violation(diff: f64, reference: f64) -> f64 {
    diff / num::max(1.0, num::abs(reference))
}

/// Numerically test the four obligations of one atom declaration.
pub fn check_atom_obligations(
    decl: &AtomDecl,
    cfg: &SampleConfig,
    tol: f64,
    feas_tol: f64,
    registry: &AtomRegistry,
) -> Result<ObligationReport, VerifyError> {
    let sampler = Sampler {
        decl,
        registry,
        cfg,
        feas_tol,
    };
    let ctx = sampler.ctx();
    let empty = BTreeMap::new();
    let dim = decl.impl_vars.iter().find_map(|(_, s)| match s {
        Shape::SymMatrix(n) => Some(*n),
        _ => None,
    });

    let mut correctness = ObligationResult {
        name: "solution-correctness",
        passed: true,
        samples: 0,
        worst_violation: 0.0,
        witness: None,
    };
    let mut feasibility = ObligationResult {
        name: "solution-feasibility",
        passed: true,
        samples: 0,
        worst_violation: 0.0,
        witness: None,
    };
    let mut optimality = ObligationResult {
        name: "optimality",
        passed: true,
        samples: 0,
        worst_violation: 0.0,
        witness: None,
    };
    let mut elimination = ObligationResult {
        name: "condition-elimination",
        passed: true,
        samples: 0,
        worst_violation: 0.0,
        witness: None,
    };
    let mut exhausted = false;

    // Forward obligations: correctness and feasibility at condition-
    // satisfying argument tuples.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    for _ in 0..cfg.n {
        let s = match sampler.sample_args(&mut rng, true) {
            Some(s) => s,
            None => {
                exhausted = true;
                break;
            }
        };
        if decl.boolean {
            // Correctness for predicates: the conic normal form agrees with
            // the predicate itself. Sampled unconditionally (both in and
            // out of the set), skipping near-boundary samples.
            if let Some(us) = sampler.sample_args(&mut rng, false) {
                let body = decl.instantiate(&decl.body, &us.exprs, &empty);
                let margin = decl
                    .impl_constraints
                    .iter()
                    .map(|c| {
                        let inst = decl.instantiate(c, &us.exprs, &empty);
                        constraint_violation(&inst, &us.env, &ctx).unwrap_or(f64::INFINITY)
                    })
                    .fold(0.0, num::max);
                if margin > 10.0 * feas_tol || margin == 0.0 {
                    let lhs = margin <= feas_tol;
                    if let Ok(Value::Bool(rhs)) = eval(&body, &us.env, &ctx) {
                        correctness.samples += 1;
                        if lhs != rhs {
                            correctness.passed = false;
                            correctness.worst_violation = 1.0;
                            if correctness.witness.is_none() {
                                correctness.witness = Some(ObligationWitness {
                                    args: us.values.clone(),
                                    impl_vars: Vec::new(),
                                    perturbed: Vec::new(),
                                    violation: 1.0,
                                });
                            }
                        }
                    }
                }
            }
            // Feasibility: members satisfy the conic normal form.
            feasibility.samples += 1;
            for c in &decl.impl_constraints {
                let inst = decl.instantiate(c, &s.exprs, &empty);
                let v = constraint_violation(&inst, &s.env, &ctx).unwrap_or(f64::INFINITY);
                feasibility.worst_violation = num::max(feasibility.worst_violation, v);
                if v > feas_tol {
                    feasibility.passed = false;
                    if feasibility.witness.is_none() {
                        feasibility.witness = Some(ObligationWitness {
                            args: s.values.clone(),
                            impl_vars: Vec::new(),
                            perturbed: Vec::new(),
                            violation: v,
                        });
                    }
                }
            }
            continue;
        }

        let (impl_map, sol_env, sol_values) = match sampler.solution_values(&s) {
            Some(v) => v,
            None => {
                exhausted = true;
                break;
            }
        };
        // (1) the solution reproduces the atom's value.
        let obj = decl.instantiate(&decl.impl_objective, &s.exprs, &impl_map);
        let body = decl.instantiate(&decl.body, &s.exprs, &empty);
        match (eval(&obj, &sol_env, &ctx), eval(&body, &sol_env, &ctx)) {
            (Ok(Value::Num(lhs)), Ok(Value::Num(rhs))) => {
                correctness.samples += 1;
                let v = rel_violation(num::abs(lhs - rhs), rhs);
                correctness.worst_violation = num::max(correctness.worst_violation, v);
                if v > tol {
                    correctness.passed = false;
                    if correctness.witness.is_none() {
                        correctness.witness = Some(ObligationWitness {
                            args: s.values.clone(),
                            impl_vars: sol_values.clone(),
                            perturbed: Vec::new(),
                            violation: v,
                        });
                    }
                }
            }
            _ => continue,
        }
        // (2) the solution satisfies the graph constraints.
        feasibility.samples += 1;
        for c in &decl.impl_constraints {
            let inst = decl.instantiate(c, &s.exprs, &impl_map);
            let v = constraint_violation(&inst, &sol_env, &ctx).unwrap_or(f64::INFINITY);
            feasibility.worst_violation = num::max(feasibility.worst_violation, v);
            if v > feas_tol {
                feasibility.passed = false;
                if feasibility.witness.is_none() {
                    feasibility.witness = Some(ObligationWitness {
                        args: s.values.clone(),
                        impl_vars: sol_values.clone(),
                        perturbed: Vec::new(),
                        violation: v,
                    });
                }
            }
        }
    }

    // Backward obligations: optimality and condition elimination at
    // constraint-satisfying (args, impl vars) with directed perturbations.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let directions: &[f64] = match decl.curvature {
        Curvature::Convex => &[-1.0],
        Curvature::Concave => &[1.0],
        Curvature::Affine => &[1.0, -1.0],
    };
    for _ in 0..cfg.n {
        let s = match sampler.sample_args(&mut rng, true) {
            Some(s) => s,
            None => {
                exhausted = true;
                break;
            }
        };
        let (impl_map, env, impl_values) = match sampler.sample_impl_vars(&s, &mut rng) {
            Some(v) => v,
            None => {
                exhausted = true;
                break;
            }
        };
        let monos: Vec<Monotonicity> = (0..decl.args.len()).map(|i| decl.mono(i)).collect();
        for &dir in directions {
            let (pexprs, penv, pvalues) = sampler.perturb(&s, &monos, dir, &mut rng);
            // Optimality: the graph objective bounds the atom's value at
            // the perturbed arguments.
            let obj = decl.instantiate(&decl.impl_objective, &s.exprs, &impl_map);
            let pbody = decl.instantiate(&decl.body, &pexprs, &empty);
            if decl.boolean {
                optimality.samples += 1;
                // Membership must be preserved in the widening direction.
                match eval(&pbody, &penv, &ctx) {
                    Ok(Value::Bool(true)) => {}
                    Ok(Value::Bool(false)) => {
                        optimality.passed = false;
                        optimality.worst_violation = 1.0;
                        if optimality.witness.is_none() {
                            optimality.witness = Some(ObligationWitness {
                                args: s.values.clone(),
                                impl_vars: impl_values.clone(),
                                perturbed: pvalues.clone(),
                                violation: 1.0,
                            });
                        }
                    }
                    _ => {}
                }
            } else {
                let lhs = eval(&obj, &env, &ctx);
                let rhs = eval(&pbody, &penv, &ctx);
                if let (Ok(Value::Num(objv)), Ok(Value::Num(exprv))) = (lhs, rhs) {
                    optimality.samples += 1;
                    // Convex and the convex half of affine: obj >= expr(a');
                    // concave direction: obj <= expr(a').
                    let v = if dir < 0.0 {
                        rel_violation(exprv - objv, exprv)
                    } else {
                        rel_violation(objv - exprv, exprv)
                    };
                    let v = num::max(0.0, v);
                    optimality.worst_violation = num::max(optimality.worst_violation, v);
                    if v > tol {
                        optimality.passed = false;
                        if optimality.witness.is_none() {
                            optimality.witness = Some(ObligationWitness {
                                args: s.values.clone(),
                                impl_vars: impl_values.clone(),
                                perturbed: pvalues.clone(),
                                violation: v,
                            });
                        }
                    }
                }
            }
            // Condition elimination: the perturbed arguments still satisfy
            // the variable conditions.
            if !decl.vconds.is_empty() {
                elimination.samples += 1;
                for cond in &decl.vconds {
                    let inst = decl.instantiate(cond, &pexprs, &empty);
                    match eval(&inst, &penv, &ctx) {
                        Ok(Value::Bool(true)) => {}
                        _ => {
                            elimination.passed = false;
                            elimination.worst_violation = 1.0;
                            if elimination.witness.is_none() {
                                elimination.witness = Some(ObligationWitness {
                                    args: s.values.clone(),
                                    impl_vars: impl_values.clone(),
                                    perturbed: pvalues.clone(),
                                    violation: 1.0,
                                });
                            }
                        }
                    }
                }
            } else {
                elimination.samples += 1;
            }
        }
    }

    let report = ObligationReport {
        atom: decl.name.clone(),
        dim,
        results: alloc::vec![correctness, feasibility, optimality, elimination],
        exhausted,
    };
    if report.results.iter().all(|r| r.samples == 0) {
        return Err(VerifyError::MapMismatch(format!(
            "sampler exhausted: no condition-satisfying samples for `{}`",
            decl.name
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::AtomRegistry;

    fn quick_cfg() -> SampleConfig {
        SampleConfig::with_n_seed(200, 0)
    }

    #[test]
    fn sqrt_all_four_pass() {
        let reg = AtomRegistry::builtin();
        let d = reg.resolve("sqrt", None).unwrap();
        let r = check_atom_obligations(&d, &quick_cfg(), 1e-9, 1e-6, &reg).unwrap();
        assert!(r.all_passed(), "{r:?}");
        assert!(r.result("optimality").unwrap().samples > 0);
    }

    #[test]
    fn broken_sqrt_fails_optimality_with_witness() {
        let reg = AtomRegistry::builtin();
        let mut d = reg.resolve("sqrt", None).unwrap();
        // Constraint v <= a instead of v^2 <= a.
        d.name = "sqrt_broken".into();
        d.impl_constraints = alloc::vec![Expr::apply(
            "posOrthCone",
            alloc::vec![Expr::sub(Expr::var("a"), Expr::var("t"))]
        )];
        let r = check_atom_obligations(&d, &quick_cfg(), 1e-9, 1e-6, &reg).unwrap();
        let opt = r.result("optimality").unwrap();
        assert!(!opt.passed);
        let w = opt.witness.as_ref().expect("failure must carry a witness");
        // Replay: v > sqrt(a') at the witness.
        let v = match w.impl_vars.iter().find(|(n, _)| n == "t") {
            Some((_, Value::Num(v))) => *v,
            _ => panic!("witness should bind t"),
        };
        let a_pert = match w.perturbed.iter().find(|(n, _)| n == "a") {
            Some((_, Value::Num(v))) => *v,
            _ => panic!("witness should bind a'"),
        };
        assert!(v > crate::num::sqrt(crate::num::max(a_pert, 0.0)) + 1e-12);
    }

    #[test]
    fn log_condition_elimination() {
        let reg = AtomRegistry::builtin();
        let d = reg.resolve("log", None).unwrap();
        let r = check_atom_obligations(&d, &quick_cfg(), 1e-9, 1e-6, &reg).unwrap();
        assert!(r.result("condition-elimination").unwrap().passed);
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn logdet_small_dims_pass() {
        let reg = AtomRegistry::builtin();
        for n in 1..=2 {
            let d = reg.resolve("logdet", Some(n)).unwrap();
            let cfg = SampleConfig::with_n_seed(100, 0);
            let r = check_atom_obligations(&d, &cfg, 1e-5, 1e-6, &reg).unwrap();
            assert!(r.all_passed(), "logdet n={n}: {r:?}");
        }
    }
}
