//! Samplers, the brute-force grid oracle and the strong-equivalence checker.
//!
//! The checker tests, over sampled feasible points, the two clauses of a
//! strong equivalence: the forward map sends feasible points of P to
//! feasible points of Q without increasing the objective, and the backward
//! map does the reverse. Sampler exhaustion is reported as inconclusive,
//! which is distinct from failure.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::affine::{affine_form, AffineResult, NumAffineForm, VarKey};
use crate::atom::{AtomRegistry, ConeKind};
use crate::eval::{constraint_violation, eval, EvalCtx, EvalError, Value};
use crate::expr::{
    normalize_sense, Assignment, Expr, ModelError, Problem, Sense, Shape, VarDecl,
};
use crate::linalg::SymMat;
use crate::num;
use crate::parser::ParseError;

/// Sampling configuration: a box per variable (matrix variables use their
/// box entrywise), sample count, RNG seed and the total rejection budget.
#[derive(Debug, Clone, Serialize)]
pub struct SampleConfig {
    pub boxes: BTreeMap<String, (f64, f64)>,
    pub default_box: (f64, f64),
    pub n: usize,
    pub seed: u64,
    pub max_attempts: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            boxes: BTreeMap::new(),
            default_box: (-10.0, 10.0),
            n: 1000,
            seed: 0,
            max_attempts: 100_000,
        }
    }
}

impl SampleConfig {
    pub fn with_n_seed(n: usize, seed: u64) -> Self {
        SampleConfig {
            n,
            seed,
            ..SampleConfig::default()
        }
    }

    pub fn box_for(&self, var: &str) -> (f64, f64) {
        self.boxes.get(var).copied().unwrap_or(self.default_box)
    }

    pub fn set_box(&mut self, var: &str, lo: f64, hi: f64) {
        self.boxes.insert(var.to_string(), (lo, hi));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VerifyError {
    UnboundParameter(String),
    MapMismatch(String),
    Parse(ParseError),
    Model(ModelError),
    Eval(EvalError),
    GridTooLarge { total: u128 },
    Infeasible,
}

impl core::fmt::Display for VerifyError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            VerifyError::UnboundParameter(n) => {
                write!(f, "parameter `{n}` must be bound before verification")
            }
            VerifyError::MapMismatch(m) => write!(f, "map mismatch: {m}"),
            VerifyError::Parse(e) => write!(f, "{e}"),
            VerifyError::Model(e) => write!(f, "{e}"),
            VerifyError::Eval(e) => write!(f, "{e}"),
            VerifyError::GridTooLarge { total } => {
                write!(f, "grid of {total} points exceeds the 1e8 budget")
            }
            VerifyError::Infeasible => write!(f, "no feasible grid point"),
        }
    }
}

impl From<ParseError> for VerifyError {
    fn from(e: ParseError) -> Self {
        VerifyError::Parse(e)
    }
}

impl From<EvalError> for VerifyError {
    fn from(e: EvalError) -> Self {
        VerifyError::Eval(e)
    }
}

fn require_bound(p: &Problem) -> Result<(), VerifyError> {
    let mut params = alloc::collections::BTreeSet::new();
    p.objective.free_params(&mut params);
    for c in &p.constraints {
        c.body.free_params(&mut params);
    }
    match params.into_iter().next() {
        Some(n) => Err(VerifyError::UnboundParameter(n)),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Coordinates: flatten scalar and matrix variables into a coordinate list.

#[derive(Debug, Clone)]
struct Coords {
    keys: Vec<VarKey>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    vars: Vec<VarDecl>,
}

impl Coords {
    fn new(vars: &[VarDecl], cfg: &SampleConfig) -> Coords {
        let mut keys = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for v in vars {
            let (l, h) = cfg.box_for(&v.name);
            match v.shape {
                Shape::Scalar => {
                    keys.push(VarKey::Scalar(v.name.clone()));
                    lo.push(l);
                    hi.push(h);
                }
                Shape::SymMatrix(n) => {
                    for (i, j) in SymMat::coords(n) {
                        keys.push(VarKey::entry(&v.name, i, j));
                        lo.push(l);
                        hi.push(h);
                    }
                }
            }
        }
        Coords {
            keys,
            lo,
            hi,
            vars: vars.to_vec(),
        }
    }

    fn len(&self) -> usize {
        self.keys.len()
    }

    fn index_of(&self, k: &VarKey) -> Option<usize> {
        self.keys.iter().position(|x| x == k)
    }

    fn assignment(&self, values: &[f64]) -> Assignment {
        let mut a = Assignment::new();
        let mut idx = 0;
        for v in &self.vars {
            match v.shape {
                Shape::Scalar => {
                    a.set_num(&v.name, values[idx]);
                    idx += 1;
                }
                Shape::SymMatrix(n) => {
                    let mut m = SymMat::zeros(n);
                    for (i, j) in SymMat::coords(n) {
                        m.set(i, j, values[idx]);
                        idx += 1;
                    }
                    a.set_mat(&v.name, m);
                }
            }
        }
        a
    }
}

// ---------------------------------------------------------------------------
// Feasible-point sampling

/// Result of feasible-point sampling; `exhausted` marks a partial return.
#[derive(Debug, Clone, Serialize)]
pub struct SampleOutcome {
    pub points: Vec<Assignment>,
    pub exhausted: bool,
    pub attempts: usize,
}

/// Affine equality rows in reduced row echelon form, used to solve the
/// equality constraints exactly while sampling (uniform rejection alone
/// cannot hit measure-zero sets).
struct EqSolver {
    /// (pivot coordinate, row over coordinates, constant): pivot = -(const
    /// + sum coef_j x_j).
    rows: Vec<(usize, Vec<f64>, f64)>,
    inconsistent: bool,
    free: Vec<usize>,
}

impl EqSolver {
    fn build(p: &Problem, coords: &Coords, registry: &AtomRegistry) -> EqSolver {
        let mut dense: Vec<(Vec<f64>, f64)> = Vec::new();
        for c in &p.constraints {
            let diff = match &c.body {
                Expr::Apply(f, args) => match f.as_str() {
                    "eq" => Expr::sub(args[1].clone(), args[0].clone()),
                    "zeroCone" => args[0].clone(),
                    _ => continue,
                },
                _ => continue,
            };
            let form = match affine_form(&diff, &coords.vars) {
                AffineResult::Affine(f) => f,
                AffineResult::NotAffine => continue,
            };
            let nf = match form.to_numeric(&Assignment::new(), registry) {
                Ok(nf) => nf,
                Err(_) => continue,
            };
            let mut row = alloc::vec![0.0; coords.len()];
            for (k, coef) in &nf.terms {
                if let Some(i) = coords.index_of(k) {
                    row[i] += *coef;
                }
            }
            dense.push((row, nf.constant));
        }
        // Gauss-Jordan to reduced row echelon form.
        let n = coords.len();
        let mut pivots: Vec<(usize, usize)> = Vec::new(); // (col, row)
        let mut r = 0;
        for col in 0..n {
            let mut best = r;
            let mut best_v = 0.0;
            for i in r..dense.len() {
                let v = num::abs(dense[i].0[col]);
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            if best_v < 1e-9 {
                continue;
            }
            dense.swap(r, best);
            let pv = dense[r].0[col];
            for v in dense[r].0.iter_mut() {
                *v /= pv;
            }
            dense[r].1 /= pv;
            for i in 0..dense.len() {
                if i == r {
                    continue;
                }
                let f = dense[i].0[col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let x = dense[r].0[j];
                    dense[i].0[j] -= f * x;
                }
                dense[i].1 -= f * dense[r].1;
            }
            pivots.push((col, r));
            r += 1;
            if r == dense.len() {
                break;
            }
        }
        let mut inconsistent = false;
        for (i, (row, c)) in dense.iter().enumerate() {
            if i < r {
                continue;
            }
            if row.iter().all(|v| num::abs(*v) < 1e-9) && num::abs(*c) > 1e-9 {
                inconsistent = true;
            }
        }
        let pivot_cols: alloc::collections::BTreeSet<usize> =
            pivots.iter().map(|(c, _)| *c).collect();
        let rows = pivots
            .iter()
            .map(|(col, ri)| (*col, dense[*ri].0.clone(), dense[*ri].1))
            .collect();
        let free = (0..n).filter(|c| !pivot_cols.contains(c)).collect();
        EqSolver {
            rows,
            inconsistent,
            free,
        }
    }

    /// Fill pivot coordinates from the sampled free coordinates.
    fn solve(&self, values: &mut [f64]) {
        for (pivot, row, constant) in &self.rows {
            let mut s = *constant;
            for (j, coef) in row.iter().enumerate() {
                if j != *pivot && *coef != 0.0 {
                    s += coef * values[j];
                }
            }
            values[*pivot] = -s;
        }
    }
}

/// Sample up to `cfg.n` feasible points of `p`, uniformly in the box over
/// the free coordinates; affine equality constraints are solved exactly.
/// Deterministic given the seed.
pub fn sample_feasible(
    p: &Problem,
    cfg: &SampleConfig,
    registry: &AtomRegistry,
    feas_tol: f64,
) -> Result<SampleOutcome, VerifyError> {
    require_bound(p)?;
    let coords = Coords::new(&p.vars, cfg);
    let eqs = EqSolver::build(p, &coords, registry);
    let mut points = Vec::new();
    let mut attempts = 0usize;
    if eqs.inconsistent {
        return Ok(SampleOutcome {
            points,
            exhausted: true,
            attempts,
        });
    }
    let ctx = EvalCtx::with_tol(registry, feas_tol);
    let mut values = alloc::vec![0.0; coords.len()];
    while points.len() < cfg.n && attempts < cfg.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(attempts as u64 + 1);
        attempts += 1;
        for &j in &eqs.free {
            values[j] = rng.gen_range(coords.lo[j]..=coords.hi[j]);
        }
        eqs.solve(&mut values);
        // Pivot coordinates must stay inside their boxes.
        let mut ok = true;
        for (pivot, _, _) in &eqs.rows {
            if values[*pivot] < coords.lo[*pivot] - 1e-12
                || values[*pivot] > coords.hi[*pivot] + 1e-12
            {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let a = coords.assignment(&values);
        if feasible(p, &a, &ctx, feas_tol) {
            points.push(a);
        }
    }
    let exhausted = points.len() < cfg.n;
    Ok(SampleOutcome {
        points,
        exhausted,
        attempts,
    })
}

fn feasible(p: &Problem, a: &Assignment, ctx: &EvalCtx, feas_tol: f64) -> bool {
    for c in &p.constraints {
        match constraint_violation(&c.body, a, ctx) {
            Ok(v) => {
                if v > feas_tol {
                    return false;
                }
            }
            Err(_) => return false,
        }
    }
    true
}

fn max_violation(p: &Problem, a: &Assignment, ctx: &EvalCtx) -> Result<(f64, String), EvalError> {
    let mut worst = 0.0;
    let mut name = String::new();
    for c in &p.constraints {
        let v = constraint_violation(&c.body, a, ctx)?;
        if v > worst {
            worst = v;
            name = c.name.clone();
        }
    }
    Ok((worst, name))
}

// ---------------------------------------------------------------------------
// Strong equivalence

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EquivMode {
    /// The two §4 clauses, checked with user-supplied maps.
    Strong,
    /// Compiler reductions additionally require g(phi(x)) = f(x) and
    /// psi . phi = identity.
    Compiler,
    /// Objectives related by a strictly monotone transform: checks order
    /// agreement of objective values instead of equality (a pragmatic
    /// surrogate, labeled in reports).
    Monotone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EquivStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivWitness {
    pub point: Assignment,
    pub mapped: Assignment,
    pub constraint: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DirectionReport {
    pub samples: usize,
    pub feasibility_violations: usize,
    pub max_feasibility_violation: f64,
    /// forward: max over samples of g(phi(x)) - f(x) (signed);
    /// backward: max of f(psi(y)) - g(y).
    pub max_objective_gap: f64,
    /// Compiler mode only: max |g(phi(x)) - f(x)|.
    pub max_abs_objective_gap: f64,
    pub order_disagreements: usize,
    pub witness: Option<EquivWitness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivReport {
    pub status: EquivStatus,
    pub mode: EquivMode,
    pub forward: DirectionReport,
    pub backward: DirectionReport,
    /// Compiler mode: psi(phi(x)) == x held exactly on every sample.
    pub roundtrip_identity: Option<bool>,
    pub exhausted: bool,
    pub notes: Vec<String>,
}

/// Total variable maps: one expression per target variable.
pub type VarMap = Vec<(String, Expr)>;

fn apply_map(
    map: &VarMap,
    a: &Assignment,
    target_vars: &[VarDecl],
    ctx: &EvalCtx,
) -> Result<Assignment, EvalError> {
    let mut out = Assignment::new();
    for (name, e) in map {
        match eval(e, a, ctx)? {
            Value::Num(v) => out.set_num(name, v),
            Value::Mat(m) => {
                let sym = SymMat::from_dense(&m).ok_or_else(|| EvalError::ShapeMismatch {
                    what: "map image is not a square matrix".to_string(),
                    path: "root".to_string(),
                })?;
                out.set_mat(name, sym);
            }
            _ => {
                return Err(EvalError::ShapeMismatch {
                    what: format!("map for `{name}` is not numeric"),
                    path: "root".to_string(),
                })
            }
        }
    }
    // Shape check against the declared target variables.
    let _ = target_vars;
    Ok(out)
}

fn check_map_coverage(map: &VarMap, vars: &[VarDecl], side: &str) -> Result<(), VerifyError> {
    let have: alloc::collections::BTreeSet<&str> = map.iter().map(|(n, _)| n.as_str()).collect();
    for v in vars {
        if !have.contains(v.name.as_str()) {
            return Err(VerifyError::MapMismatch(format!(
                "{side} map does not assign variable `{}`",
                v.name
            )));
        }
    }
    if map.len() != vars.len() {
        return Err(VerifyError::MapMismatch(format!(
            "{side} map assigns {} names but the problem has {} variables",
            map.len(),
            vars.len()
        )));
    }
    Ok(())
}

/// Check a strong equivalence between `p` and `q` through the given maps.
///
/// Both problems are normalized to minimization before objectives are
/// compared. `tol` bounds objective gaps, `feas_tol` bounds constraint
/// violations at mapped points.
#[allow(clippy::too_many_arguments)]
pub fn check_strong_equivalence(
    p: &Problem,
    q: &Problem,
    forward: &VarMap,
    backward: &VarMap,
    cfg: &SampleConfig,
    tol: f64,
    feas_tol: f64,
    mode: EquivMode,
    registry: &AtomRegistry,
) -> Result<EquivReport, VerifyError> {
    require_bound(p)?;
    require_bound(q)?;
    check_map_coverage(forward, &q.vars, "forward")?;
    check_map_coverage(backward, &p.vars, "backward")?;
    let pn = normalize_sense(p);
    let qn = normalize_sense(q);
    let ctx = EvalCtx::with_tol(registry, feas_tol);

    let mut notes = Vec::new();
    let mut exhausted = false;

    let ps = sample_feasible(&pn, cfg, registry, feas_tol)?;
    if ps.exhausted {
        exhausted = true;
        notes.push(format!(
            "source sampler exhausted: {} of {} points after {} attempts",
            ps.points.len(),
            cfg.n,
            ps.attempts
        ));
    }
    let mut fwd = DirectionReport::default();
    let mut roundtrip = true;
    let mut fwd_pairs: Vec<(f64, f64)> = Vec::new();
    for x in &ps.points {
        fwd.samples += 1;
        let y = match apply_map(forward, x, &qn.vars, &ctx) {
            Ok(y) => y,
            Err(e) => {
                fwd.feasibility_violations += 1;
                if fwd.witness.is_none() {
                    fwd.witness = Some(EquivWitness {
                        point: x.clone(),
                        mapped: Assignment::new(),
                        constraint: None,
                        detail: format!("forward map failed to evaluate: {e}"),
                    });
                }
                continue;
            }
        };
        let (viol, cname) = max_violation(&qn, &y, &ctx).unwrap_or((f64::INFINITY, String::new()));
        fwd.max_feasibility_violation = num::max(fwd.max_feasibility_violation, viol);
        if viol > feas_tol {
            fwd.feasibility_violations += 1;
            if fwd.witness.is_none() {
                fwd.witness = Some(EquivWitness {
                    point: x.clone(),
                    mapped: y.clone(),
                    constraint: Some(cname),
                    detail: format!("forward image violates feasibility by {viol:e}"),
                });
            }
            continue;
        }
        let f = objective_value(&pn, x, &ctx)?;
        let g = objective_value(&qn, &y, &ctx)?;
        match mode {
            EquivMode::Monotone => fwd_pairs.push((f, g)),
            _ => {
                let gap = g - f;
                fwd.max_objective_gap = num::max(fwd.max_objective_gap, gap);
                fwd.max_abs_objective_gap = num::max(fwd.max_abs_objective_gap, num::abs(gap));
                let bad = match mode {
                    EquivMode::Compiler => num::abs(gap) > tol,
                    _ => gap > tol,
                };
                if bad && fwd.witness.is_none() {
                    fwd.witness = Some(EquivWitness {
                        point: x.clone(),
                        mapped: y.clone(),
                        constraint: None,
                        detail: format!("objective gap g(phi(x)) - f(x) = {gap:e}"),
                    });
                }
            }
        }
        if mode == EquivMode::Compiler {
            let back = apply_map(backward, &y, &pn.vars, &ctx)?;
            if &back != x {
                roundtrip = false;
                if fwd.witness.is_none() {
                    fwd.witness = Some(EquivWitness {
                        point: x.clone(),
                        mapped: y,
                        constraint: None,
                        detail: "psi(phi(x)) differs from x".to_string(),
                    });
                }
            }
        }
    }
    if mode == EquivMode::Monotone {
        fwd.order_disagreements = order_disagreements(&mut fwd_pairs, tol);
    }

    let qs = sample_feasible(&qn, cfg, registry, feas_tol)?;
    if qs.exhausted {
        exhausted = true;
        notes.push(format!(
            "target sampler exhausted: {} of {} points after {} attempts",
            qs.points.len(),
            cfg.n,
            qs.attempts
        ));
    }
    let mut bwd = DirectionReport::default();
    let mut bwd_pairs: Vec<(f64, f64)> = Vec::new();
    for y in &qs.points {
        bwd.samples += 1;
        let x = match apply_map(backward, y, &pn.vars, &ctx) {
            Ok(x) => x,
            Err(e) => {
                bwd.feasibility_violations += 1;
                if bwd.witness.is_none() {
                    bwd.witness = Some(EquivWitness {
                        point: y.clone(),
                        mapped: Assignment::new(),
                        constraint: None,
                        detail: format!("backward map failed to evaluate: {e}"),
                    });
                }
                continue;
            }
        };
        let (viol, cname) = max_violation(&pn, &x, &ctx).unwrap_or((f64::INFINITY, String::new()));
        bwd.max_feasibility_violation = num::max(bwd.max_feasibility_violation, viol);
        if viol > feas_tol {
            bwd.feasibility_violations += 1;
            if bwd.witness.is_none() {
                bwd.witness = Some(EquivWitness {
                    point: y.clone(),
                    mapped: x.clone(),
                    constraint: Some(cname),
                    detail: format!("backward image violates feasibility by {viol:e}"),
                });
            }
            continue;
        }
        let g = objective_value(&qn, y, &ctx)?;
        let f = objective_value(&pn, &x, &ctx)?;
        match mode {
            EquivMode::Monotone => bwd_pairs.push((g, f)),
            _ => {
                let gap = f - g;
                bwd.max_objective_gap = num::max(bwd.max_objective_gap, gap);
                if gap > tol && bwd.witness.is_none() {
                    bwd.witness = Some(EquivWitness {
                        point: y.clone(),
                        mapped: x.clone(),
                        constraint: None,
                        detail: format!("objective gap f(psi(y)) - g(y) = {gap:e}"),
                    });
                }
            }
        }
    }
    if mode == EquivMode::Monotone {
        bwd.order_disagreements = order_disagreements(&mut bwd_pairs, tol);
    }

    let failed = fwd.witness.is_some()
        || bwd.witness.is_some()
        || fwd.order_disagreements > 0
        || bwd.order_disagreements > 0
        || (mode == EquivMode::Compiler && !roundtrip);
    let status = if failed {
        EquivStatus::Fail
    } else if exhausted || fwd.samples == 0 || bwd.samples == 0 {
        EquivStatus::Inconclusive
    } else {
        EquivStatus::Pass
    };
    if mode == EquivMode::Monotone {
        notes.push(
            "monotone-equivalence mode: order agreement of objective values, not equality"
                .to_string(),
        );
    }
    Ok(EquivReport {
        status,
        mode,
        forward: fwd,
        backward: bwd,
        roundtrip_identity: (mode == EquivMode::Compiler).then_some(roundtrip),
        exhausted,
        notes,
    })
}

fn objective_value(p: &Problem, a: &Assignment, ctx: &EvalCtx) -> Result<f64, VerifyError> {
    match eval(&p.objective, a, ctx)? {
        Value::Num(v) => Ok(v),
        _ => Err(VerifyError::Eval(EvalError::ShapeMismatch {
            what: "objective is not scalar".to_string(),
            path: "root".to_string(),
        })),
    }
}

/// Count order disagreements between paired objective values: sort by the
/// first component and count adjacent inversions of the second beyond the
/// tolerance (ties within `tol` are skipped).
fn order_disagreements(pairs: &mut [(f64, f64)], tol: f64) -> usize {
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(core::cmp::Ordering::Equal));
    let mut bad = 0;
    for w in pairs.windows(2) {
        let (f0, g0) = w[0];
        let (f1, g1) = w[1];
        if f1 - f0 <= tol {
            continue;
        }
        if g1 < g0 - tol {
            bad += 1;
        }
    }
    bad
}

/// Identity-plus-interpretation maps of a compiler reduction.
pub fn reduction_maps(red: &crate::canon::Reduction) -> (VarMap, VarMap) {
    let mut forward: VarMap = red
        .original_vars
        .iter()
        .map(|v| (v.name.clone(), Expr::Var(v.name.clone())))
        .collect();
    forward.extend(red.forward.iter().cloned());
    let backward: VarMap = red
        .original_vars
        .iter()
        .map(|v| (v.name.clone(), Expr::Var(v.name.clone())))
        .collect();
    (forward, backward)
}

/// Parse and check a user-supplied reduction: two problem texts plus a map
/// file with `forward` / `backward` sections.
#[allow(clippy::too_many_arguments)]
pub fn check_user_reduction(
    p_text: &str,
    q_text: &str,
    maps_text: &str,
    cfg: &SampleConfig,
    tol: f64,
    feas_tol: f64,
    monotone: bool,
    registry: &AtomRegistry,
) -> Result<EquivReport, VerifyError> {
    let p = crate::parser::parse_problem(p_text, registry)?;
    let q = crate::parser::parse_problem(q_text, registry)?;
    p.validate(registry).map_err(VerifyError::Model)?;
    q.validate(registry).map_err(VerifyError::Model)?;
    let (forward, backward) = crate::parser::parse_user_maps(maps_text, &p, &q, registry)?;
    let mode = if monotone {
        EquivMode::Monotone
    } else {
        EquivMode::Strong
    };
    check_strong_equivalence(&p, &q, &forward, &backward, cfg, tol, feas_tol, mode, registry)
}

// ---------------------------------------------------------------------------
// Brute-force grid oracle

#[derive(Debug, Clone, Serialize)]
pub struct BruteForceResult {
    pub value: f64,
    pub argopt: Assignment,
    pub feasible_points: usize,
    /// Largest grid spacing over all coordinates.
    pub max_step: f64,
}

enum CompiledCon {
    Cone {
        kind: ConeKind,
        args: Vec<Vec<(usize, f64)>>,
        consts: Vec<f64>,
    },
    Fallback(Expr),
}

fn compile_constraint(
    body: &Expr,
    coords: &Coords,
    registry: &AtomRegistry,
) -> Option<CompiledCon> {
    let (f, args) = match body {
        Expr::Apply(f, args) => (f.as_str(), args),
        _ => return None,
    };
    let (kind, scalars): (ConeKind, Vec<Expr>) = match f {
        "eq" => (
            ConeKind::Zero,
            alloc::vec![Expr::sub(args[1].clone(), args[0].clone())],
        ),
        "le" | "lt" => (
            ConeKind::PosOrth,
            alloc::vec![Expr::sub(args[1].clone(), args[0].clone())],
        ),
        "zeroCone" => (ConeKind::Zero, alloc::vec![args[0].clone()]),
        "posOrthCone" => (ConeKind::PosOrth, alloc::vec![args[0].clone()]),
        "soCone" | "rotatedSoCone" => {
            let kind = ConeKind::from_atom(f).unwrap();
            let mut s: Vec<Expr> = args[..args.len() - 1].to_vec();
            match args.last() {
                Some(Expr::Apply(v, items)) if v == "vec" => s.extend(items.iter().cloned()),
                Some(other) => s.push(other.clone()),
                None => return None,
            }
            (kind, s)
        }
        "expCone" => (ConeKind::Exp, args.clone()),
        _ => return None,
    };
    let mut rows = Vec::new();
    let mut consts = Vec::new();
    for s in &scalars {
        let nf: NumAffineForm = affine_form(s, &coords.vars)
            .into_form()?
            .to_numeric(&Assignment::new(), registry)
            .ok()?;
        let mut row = Vec::new();
        for (k, c) in &nf.terms {
            row.push((coords.index_of(k)?, *c));
        }
        rows.push(row);
        consts.push(nf.constant);
    }
    Some(CompiledCon::Cone {
        kind,
        args: rows,
        consts,
    })
}

fn compiled_violation(
    c: &CompiledCon,
    values: &[f64],
    a: &mut Option<Assignment>,
    coords: &Coords,
    ctx: &EvalCtx,
) -> f64 {
    match c {
        CompiledCon::Cone {
            kind,
            args,
            consts,
        } => {
            let val = |i: usize| -> f64 {
                let mut s = consts[i];
                for (j, coef) in &args[i] {
                    s += coef * values[*j];
                }
                s
            };
            match kind {
                ConeKind::Zero => num::abs(val(0)),
                ConeKind::PosOrth => num::max(0.0, -val(0)),
                ConeKind::SecondOrder => {
                    let t = val(0);
                    let mut sq = 0.0;
                    for i in 1..args.len() {
                        let x = val(i);
                        sq += x * x;
                    }
                    num::max(0.0, num::sqrt(sq) - t)
                }
                ConeKind::RotatedSecondOrder => {
                    let v = val(0);
                    let w = val(1);
                    let mut sq = 0.0;
                    for i in 2..args.len() {
                        let x = val(i);
                        sq += x * x;
                    }
                    let mut viol = num::max(0.0, sq - 2.0 * v * w);
                    viol = num::max(viol, num::max(0.0, -v));
                    num::max(viol, num::max(0.0, -w))
                }
                ConeKind::Exp => {
                    let a = val(0);
                    let b = val(1);
                    let c = val(2);
                    if b <= 0.0 {
                        return f64::INFINITY;
                    }
                    let lhs = b * num::exp(a / b);
                    if !lhs.is_finite() {
                        return f64::INFINITY;
                    }
                    num::max(0.0, lhs - c)
                }
                ConeKind::Psd => f64::INFINITY,
            }
        }
        CompiledCon::Fallback(body) => {
            if a.is_none() {
                *a = Some(coords.assignment(values));
            }
            match constraint_violation(body, a.as_ref().unwrap(), ctx) {
                Ok(v) => v,
                Err(_) => f64::INFINITY,
            }
        }
    }
}

/// Exhaustive grid search. Every variable coordinate gets `grid_per_dim`
/// points across its box. Equality constraints are enforced within
/// `max(feas_tol, grid step)` since an off-grid equality can otherwise
/// never be met; inequalities use `feas_tol` directly. The returned value
/// is an optimum bound converging as the grid refines.
pub fn brute_force_optimum(
    p: &Problem,
    grid_per_dim: usize,
    cfg: &SampleConfig,
    registry: &AtomRegistry,
    feas_tol: f64,
) -> Result<BruteForceResult, VerifyError> {
    require_bound(p)?;
    let coords = Coords::new(&p.vars, cfg);
    let d = coords.len();
    let g = grid_per_dim.max(1);
    let total = (g as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    if total > 100_000_000 {
        return Err(VerifyError::GridTooLarge { total });
    }
    let ctx = EvalCtx::with_tol(registry, feas_tol);

    // Precompute per-dimension grid values.
    let mut grids: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut max_step = 0.0_f64;
    for j in 0..d {
        let (lo, hi) = (coords.lo[j], coords.hi[j]);
        let mut vs = Vec::with_capacity(g);
        if g == 1 {
            vs.push(lo);
        } else {
            let step = (hi - lo) / ((g - 1) as f64);
            max_step = num::max(max_step, step);
            for k in 0..g {
                vs.push(lo + step * (k as f64));
            }
        }
        grids.push(vs);
    }
    let eq_tol = num::max(feas_tol, max_step);

    let minimize = p.sense == Sense::Minimize;
    let compiled: Vec<(CompiledCon, f64)> = p
        .constraints
        .iter()
        .map(|c| {
            let tol = match &c.body {
                Expr::Apply(f, _) if f == "eq" || f == "zeroCone" => eq_tol,
                _ => feas_tol,
            };
            (
                compile_constraint(&c.body, &coords, registry)
                    .unwrap_or_else(|| CompiledCon::Fallback(c.body.clone())),
                tol,
            )
        })
        .collect();
    let obj_fast = affine_form(&p.objective, &coords.vars)
        .into_form()
        .and_then(|f| f.to_numeric(&Assignment::new(), registry).ok())
        .and_then(|nf| {
            let mut row = Vec::new();
            for (k, c) in &nf.terms {
                row.push((coords.index_of(k)?, *c));
            }
            Some((row, nf.constant))
        });

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut feasible_points = 0usize;
    let mut idx = alloc::vec![0usize; d];
    let mut values: Vec<f64> = idx.iter().enumerate().map(|(j, _)| grids[j][0]).collect();
    let total = total as u64;
    for step in 0..total {
        if step > 0 {
            // Mixed-radix increment.
            let mut j = d - 1;
            loop {
                idx[j] += 1;
                if idx[j] < g {
                    values[j] = grids[j][idx[j]];
                    break;
                }
                idx[j] = 0;
                values[j] = grids[j][0];
                if j == 0 {
                    break;
                }
                j -= 1;
            }
        }
        let mut assignment: Option<Assignment> = None;
        let mut ok = true;
        for (c, tol) in &compiled {
            let v = compiled_violation(c, &values, &mut assignment, &coords, &ctx);
            if v > *tol {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let obj = match &obj_fast {
            Some((row, c)) => {
                let mut s = *c;
                for (j, coef) in row {
                    s += coef * values[*j];
                }
                s
            }
            None => {
                if assignment.is_none() {
                    assignment = Some(coords.assignment(&values));
                }
                match eval(&p.objective, assignment.as_ref().unwrap(), &ctx) {
                    Ok(Value::Num(v)) => v,
                    _ => continue,
                }
            }
        };
        feasible_points += 1;
        let better = match &best {
            None => true,
            Some((b, _)) =>

                if minimize {
                    obj < *b
                } else {
                    obj > *b
                },
        };
        if better {
            best = Some((obj, values.clone()));
        }
    }
    match best {
        Some((value, values)) => Ok(BruteForceResult {
            value,
            argopt: coords.assignment(&values),
            feasible_points,
            max_step,
        }),
        None => Err(VerifyError::Infeasible),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_problem;

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
    fn samples_satisfy_all_constraints() {
        let registry = reg();
        let p = parse_problem(SO1, &registry).unwrap();
        let mut cfg = SampleConfig::with_n_seed(100, 0);
        cfg.default_box = (-3.0, 3.0);
        let out = sample_feasible(&p, &cfg, &registry, 1e-6).unwrap();
        assert!(!out.exhausted, "wanted 100 points, got {}", out.points.len());
        assert_eq!(out.points.len(), 100);
        let ctx = EvalCtx::new(&registry);
        for a in &out.points {
            for c in &p.constraints {
                let v = constraint_violation(&c.body, a, &ctx).unwrap();
                assert!(v <= 1e-6, "violation {v} on {}", c.name);
            }
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let registry = reg();
        let p = parse_problem(SO1, &registry).unwrap();
        let cfg = SampleConfig::with_n_seed(10, 42);
        let a = sample_feasible(&p, &cfg, &registry, 1e-6).unwrap();
        let b = sample_feasible(&p, &cfg, &registry, 1e-6).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn infeasible_problem_exhausts_with_zero_points() {
        let registry = reg();
        let p = parse_problem(
            "optimization (x : R) minimize x subject to a : x <= -1 b : 1 <= x",
            &registry,
        )
        .unwrap();
        let mut cfg = SampleConfig::with_n_seed(10, 0);
        cfg.max_attempts = 2000;
        let out = sample_feasible(&p, &cfg, &registry, 1e-6).unwrap();
        assert!(out.exhausted);
        assert!(out.points.is_empty());
    }

    #[test]
    fn unconstrained_keeps_everything() {
        let registry = reg();
        let p = parse_problem("optimization (x : R) minimize x", &registry).unwrap();
        let cfg = SampleConfig::with_n_seed(50, 1);
        let out = sample_feasible(&p, &cfg, &registry, 1e-6).unwrap();
        assert_eq!(out.points.len(), 50);
        assert_eq!(out.attempts, 50);
    }

    #[test]
    fn brute_force_trivial_bound() {
        let registry = reg();
        let p = parse_problem(
            "optimization (x : R) minimize x subject to c : 0 <= x",
            &registry,
        )
        .unwrap();
        let mut cfg = SampleConfig::default();
        cfg.set_box("x", -1.0, 1.0);
        let r = brute_force_optimum(&p, 2001, &cfg, &registry, 1e-6).unwrap();
        assert!((r.value - 0.0).abs() < 1e-12);
        assert!((r.argopt.num("x").unwrap()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_exp_at_active_bound() {
        let registry = reg();
        let p = parse_problem(
            "optimization (x : R) minimize exp x subject to c : 1 <= x",
            &registry,
        )
        .unwrap();
        let mut cfg = SampleConfig::default();
        cfg.set_box("x", -1.0, 3.0);
        let r = brute_force_optimum(&p, 2001, &cfg, &registry, 1e-6).unwrap();
        assert!((r.value - core::f64::consts::E).abs() < 1e-2);
        assert!((r.argopt.num("x").unwrap() - 1.0).abs() < 2e-3);
    }

    #[test]
    fn brute_force_so1_matches_paper() {
        let registry = reg();
        // Recast as a minimization of -sqrt(x - y).
        let p = parse_problem(SO1, &registry).unwrap();
        let pn = normalize_sense(&p);
        let mut cfg = SampleConfig::default();
        cfg.set_box("x", -2.0, 2.0);
        cfg.set_box("y", -6.0, 0.0);
        let r = brute_force_optimum(&pn, 2001, &cfg, &registry, 1e-6).unwrap();
        assert!(
            (r.value + 2.101003).abs() < 2e-3,
            "value {} vs -2.101003",
            r.value
        );
        assert!((r.argopt.num("x").unwrap() + 1.414214).abs() < 3e-3);
        assert!((r.argopt.num("y").unwrap() + 5.828427).abs() < 3e-3);
    }

    #[test]
    fn infeasible_grid_is_reported() {
        let registry = reg();
        let p = parse_problem(
            "optimization (x : R) minimize x subject to a : x <= -1 b : 1 <= x",
            &registry,
        )
        .unwrap();
        let cfg = SampleConfig::default();
        assert!(matches!(
            brute_force_optimum(&p, 101, &cfg, &registry, 1e-6),
            Err(VerifyError::Infeasible)
        ));
    }
}
