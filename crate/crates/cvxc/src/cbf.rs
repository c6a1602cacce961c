//! The conic benchmark format subset emitted for external solvers.
//!
//! The dialect is a version-3 subset and is normative for this toolchain:
//!
//! - `VER`, `OBJSENSE` (always `MIN`), `VAR` (free scalar variables only),
//!   `CON` with cone rows, `OBJACOORD`/`OBJBCOORD`, `ACOORD`/`BCOORD`,
//!   and `PSDCON` with `HCOORD`/`DCOORD` for semidefinite blocks.
//! - Cone codes: `L=` zero, `L+` nonnegative, `Q` second order (first row
//!   bounds the norm of the rest), `QR` rotated second order in the order
//!   (v, w, x...), `EXP` exponential in the order (a, b, c) meaning
//!   b*exp(a/b) <= c.
//! - Scalar variables are ordered: original variables in declaration
//!   order (symmetric matrices expand to their upper triangle, row major),
//!   then fresh variables in allocation order.
//! - `HCOORD`/`DCOORD` list upper-triangle entries (i <= j).
//! - Coordinates are sorted ascending and floats print as the shortest
//!   round-trip decimal, making emission byte-deterministic.

use cvxc_core::affine::{affine_form, matrix_affine_entries, VarKey};
use cvxc_core::atom::{AtomRegistry, ConeKind};
use cvxc_core::canon::ReducedProblem;
use cvxc_core::expr::{Assignment, Expr, Shape};
use cvxc_core::linalg::SymMat;
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub enum CbfError {
    NonConicProblem(String),
    Malformed { line: usize, what: String },
}

impl std::fmt::Display for CbfError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CbfError::NonConicProblem(m) => write!(f, "problem is not in conic form: {m}"),
            CbfError::Malformed { line, what } => {
                write!(f, "malformed CBF at line {line}: {what}")
            }
        }
    }
}

impl std::error::Error for CbfError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeCode {
    Zero,
    Nonneg,
    Quad,
    RotatedQuad,
    Exp,
}

impl ConeCode {
    pub fn token(self) -> &'static str {
        match self {
            ConeCode::Zero => "L=",
            ConeCode::Nonneg => "L+",
            ConeCode::Quad => "Q",
            ConeCode::RotatedQuad => "QR",
            ConeCode::Exp => "EXP",
        }
    }

    fn from_token(s: &str) -> Option<ConeCode> {
        Some(match s {
            "L=" => ConeCode::Zero,
            "L+" => ConeCode::Nonneg,
            "Q" => ConeCode::Quad,
            "QR" => ConeCode::RotatedQuad,
            "EXP" => ConeCode::Exp,
            _ => return None,
        })
    }
}

/// In-memory form of a CBF file.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfDocument {
    pub version: u32,
    /// Scalar variable names in the deterministic emission order. Not part
    /// of the file; used to map solutions back to assignments.
    pub var_keys: Vec<VarKey>,
    pub con_blocks: Vec<(ConeCode, usize)>,
    pub obj_coords: Vec<(usize, f64)>,
    pub obj_const: f64,
    pub a_coords: Vec<(usize, usize, f64)>,
    pub b_coords: Vec<(usize, f64)>,
    pub psd_var_dims: Vec<usize>,
    pub psd_con_dims: Vec<usize>,
    pub h_coords: Vec<(usize, usize, usize, usize, f64)>,
    pub d_coords: Vec<(usize, usize, usize, f64)>,
}

impl CbfDocument {
    pub fn nvars(&self) -> usize {
        self.var_keys.len()
    }

    pub fn nrows(&self) -> usize {
        self.con_blocks.iter().map(|(_, n)| n).sum()
    }

    /// Map a scalar-variable vector back to an assignment over the reduced
    /// problem's variables.
    pub fn assignment_from_values(
        &self,
        q: &ReducedProblem,
        values: &[f64],
    ) -> Option<Assignment> {
        if values.len() != self.var_keys.len() {
            return None;
        }
        let mut a = Assignment::new();
        let mut mats: BTreeMap<String, SymMat> = BTreeMap::new();
        for v in q.all_vars() {
            if let Shape::SymMatrix(n) = v.shape {
                mats.insert(v.name.clone(), SymMat::zeros(n));
            }
        }
        for (k, val) in self.var_keys.iter().zip(values.iter()) {
            match k {
                VarKey::Scalar(n) => a.set_num(n, *val),
                VarKey::Entry(n, i, j) => {
                    mats.get_mut(n)?.set(*i, *j, *val);
                }
            }
        }
        for (n, m) in mats {
            a.set_mat(&n, m);
        }
        Some(a)
    }
}

fn flatten_vars(q: &ReducedProblem) -> Vec<VarKey> {
    let mut keys = Vec::new();
    for v in q.all_vars() {
        match v.shape {
            Shape::Scalar => keys.push(VarKey::Scalar(v.name.clone())),
            Shape::SymMatrix(n) => {
                for (i, j) in SymMat::coords(n) {
                    keys.push(VarKey::entry(&v.name, i, j));
                }
            }
        }
    }
    keys
}

/// Build the document for a reduced problem.
pub fn build_cbf(q: &ReducedProblem, registry: &AtomRegistry) -> Result<CbfDocument, CbfError> {
    let vars = q.all_vars();
    let keys = flatten_vars(q);
    let index: BTreeMap<VarKey, usize> = keys
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, k)| (k, i))
        .collect();
    let empty = Assignment::new();

    let scalar_row = |e: &Expr| -> Result<(Vec<(usize, f64)>, f64), CbfError> {
        let form = affine_form(e, &vars)
            .into_form()
            .ok_or_else(|| CbfError::NonConicProblem("non-affine cone argument".into()))?
            .to_numeric(&empty, registry)
            .map_err(|e| CbfError::NonConicProblem(e.to_string()))?;
        let mut terms = Vec::new();
        for (k, c) in &form.terms {
            let idx = *index
                .get(k)
                .ok_or_else(|| CbfError::NonConicProblem(format!("unknown coordinate {k}")))?;
            if !c.is_finite() || !form.constant.is_finite() {
                return Err(CbfError::NonConicProblem("non-finite coefficient".into()));
            }
            terms.push((idx, *c));
        }
        terms.sort_by_key(|(i, _)| *i);
        Ok((terms, form.constant))
    };

    let (obj_coords, obj_const) = scalar_row(&q.objective)?;

    let mut con_blocks = Vec::new();
    let mut a_coords = Vec::new();
    let mut b_coords = Vec::new();
    let mut psd_con_dims = Vec::new();
    let mut h_coords = Vec::new();
    let mut d_coords = Vec::new();
    let mut row = 0usize;

    let push_row = |row: usize,
                        terms: Vec<(usize, f64)>,
                        constant: f64,
                        a_coords: &mut Vec<(usize, usize, f64)>,
                        b_coords: &mut Vec<(usize, f64)>| {
        for (var, coef) in terms {
            if coef != 0.0 {
                a_coords.push((row, var, coef));
            }
        }
        if constant != 0.0 {
            b_coords.push((row, constant));
        }
    };

    for c in &q.constraints {
        let (f, args) = match &c.body {
            Expr::Apply(f, args) => (f.as_str(), args),
            _ => {
                return Err(CbfError::NonConicProblem(format!(
                    "constraint `{}` is not a cone application",
                    c.name
                )))
            }
        };
        let kind = ConeKind::from_atom(f).ok_or_else(|| {
            CbfError::NonConicProblem(format!("constraint `{}` root `{f}` is not a cone", c.name))
        })?;
        match kind {
            ConeKind::Zero | ConeKind::PosOrth => {
                let (t, b) = scalar_row(&args[0])?;
                push_row(row, t, b, &mut a_coords, &mut b_coords);
                row += 1;
                con_blocks.push((
                    if kind == ConeKind::Zero {
                        ConeCode::Zero
                    } else {
                        ConeCode::Nonneg
                    },
                    1,
                ));
            }
            ConeKind::SecondOrder | ConeKind::RotatedSecondOrder => {
                let head = if kind == ConeKind::SecondOrder { 1 } else { 2 };
                let mut scalars: Vec<&Expr> = args[..head].iter().collect();
                match &args[head] {
                    Expr::Apply(v, items) if v == "vec" => scalars.extend(items.iter()),
                    other => scalars.push(other),
                }
                let size = scalars.len();
                for e in scalars {
                    let (t, b) = scalar_row(e)?;
                    push_row(row, t, b, &mut a_coords, &mut b_coords);
                    row += 1;
                }
                con_blocks.push((
                    if kind == ConeKind::SecondOrder {
                        ConeCode::Quad
                    } else {
                        ConeCode::RotatedQuad
                    },
                    size,
                ));
            }
            ConeKind::Exp => {
                for e in args {
                    let (t, b) = scalar_row(e)?;
                    push_row(row, t, b, &mut a_coords, &mut b_coords);
                    row += 1;
                }
                con_blocks.push((ConeCode::Exp, 3));
            }
            ConeKind::Psd => {
                let entries = matrix_affine_entries(&args[0], &vars).ok_or_else(|| {
                    CbfError::NonConicProblem(format!(
                        "constraint `{}` has a non-affine matrix argument",
                        c.name
                    ))
                })?;
                let n = entries.len();
                let block = psd_con_dims.len();
                for i in 0..n {
                    for j in i..n {
                        let form = entries[i][j]
                            .to_numeric(&empty, registry)
                            .map_err(|e| CbfError::NonConicProblem(e.to_string()))?;
                        for (k, coef) in &form.terms {
                            if *coef != 0.0 {
                                let idx = *index.get(k).ok_or_else(|| {
                                    CbfError::NonConicProblem(format!("unknown coordinate {k}"))
                                })?;
                                h_coords.push((block, i, j, idx, *coef));
                            }
                        }
                        if form.constant != 0.0 {
                            d_coords.push((block, i, j, form.constant));
                        }
                    }
                }
                psd_con_dims.push(n);
            }
        }
    }

    a_coords.sort_by_key(|(r, v, _)| (*r, *v));
    b_coords.sort_by_key(|(r, _)| *r);
    h_coords.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    d_coords.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));

    Ok(CbfDocument {
        version: 3,
        var_keys: keys,
        con_blocks,
        obj_coords,
        obj_const,
        a_coords,
        b_coords,
        psd_var_dims: Vec::new(),
        psd_con_dims,
        h_coords,
        d_coords,
    })
}

/// Render a document as CBF text; byte-deterministic.
pub fn render_cbf(doc: &CbfDocument) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "VER\n{}\n", doc.version);
    let _ = writeln!(s, "OBJSENSE\nMIN\n");
    if !doc.psd_var_dims.is_empty() {
        let _ = writeln!(s, "PSDVAR\n{}", doc.psd_var_dims.len());
        for d in &doc.psd_var_dims {
            let _ = writeln!(s, "{d}");
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(s, "VAR\n{} 1\nF {}\n", doc.nvars(), doc.nvars());
    if !doc.con_blocks.is_empty() {
        let _ = writeln!(s, "CON\n{} {}", doc.nrows(), doc.con_blocks.len());
        for (code, size) in &doc.con_blocks {
            let _ = writeln!(s, "{} {}", code.token(), size);
        }
        let _ = writeln!(s);
    }
    if !doc.psd_con_dims.is_empty() {
        let _ = writeln!(s, "PSDCON\n{}", doc.psd_con_dims.len());
        for d in &doc.psd_con_dims {
            let _ = writeln!(s, "{d}");
        }
        let _ = writeln!(s);
    }
    if !doc.obj_coords.is_empty() {
        let _ = writeln!(s, "OBJACOORD\n{}", doc.obj_coords.len());
        for (v, c) in &doc.obj_coords {
            let _ = writeln!(s, "{v} {c}");
        }
        let _ = writeln!(s);
    }
    if doc.obj_const != 0.0 {
        let _ = writeln!(s, "OBJBCOORD\n{}\n", doc.obj_const);
    }
    if !doc.a_coords.is_empty() {
        let _ = writeln!(s, "ACOORD\n{}", doc.a_coords.len());
        for (r, v, c) in &doc.a_coords {
            let _ = writeln!(s, "{r} {v} {c}");
        }
        let _ = writeln!(s);
    }
    if !doc.b_coords.is_empty() {
        let _ = writeln!(s, "BCOORD\n{}", doc.b_coords.len());
        for (r, c) in &doc.b_coords {
            let _ = writeln!(s, "{r} {c}");
        }
        let _ = writeln!(s);
    }
    if !doc.h_coords.is_empty() {
        let _ = writeln!(s, "HCOORD\n{}", doc.h_coords.len());
        for (b, i, j, v, c) in &doc.h_coords {
            let _ = writeln!(s, "{b} {i} {j} {v} {c}");
        }
        let _ = writeln!(s);
    }
    if !doc.d_coords.is_empty() {
        let _ = writeln!(s, "DCOORD\n{}", doc.d_coords.len());
        for (b, i, j, c) in &doc.d_coords {
            let _ = writeln!(s, "{b} {i} {j} {c}");
        }
        let _ = writeln!(s);
    }
    s
}

/// Emit a reduced problem in the conic benchmark format.
pub fn write_cbf(q: &ReducedProblem, registry: &AtomRegistry) -> Result<String, CbfError> {
    Ok(render_cbf(&build_cbf(q, registry)?))
}

/// Parse the dialect back. Variable names are synthesized (`x0`, `x1`,
/// ...) since the file does not carry them.
pub fn read_cbf(text: &str) -> Result<CbfDocument, CbfError> {
    let mut doc = CbfDocument {
        version: 0,
        var_keys: Vec::new(),
        con_blocks: Vec::new(),
        obj_coords: Vec::new(),
        obj_const: 0.0,
        a_coords: Vec::new(),
        b_coords: Vec::new(),
        psd_var_dims: Vec::new(),
        psd_con_dims: Vec::new(),
        h_coords: Vec::new(),
        d_coords: Vec::new(),
    };
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let mut pos = 0usize;
    let err = |line: usize, what: &str| CbfError::Malformed {
        line,
        what: what.to_string(),
    };
    let mut nvars = 0usize;
    while pos < lines.len() {
        let (ln, header) = lines[pos];
        pos += 1;
        macro_rules! take {
            () => {{
                if pos >= lines.len() {
                    return Err(err(ln, "truncated section"));
                }
                let item = lines[pos];
                pos += 1;
                item
            }};
        }
        match header {
            "VER" => {
                let (l, v) = take!();
                doc.version = v.parse().map_err(|_| err(l, "bad version"))?;
            }
            "OBJSENSE" => {
                let (l, v) = take!();
                if v != "MIN" {
                    return Err(err(l, "only MIN is supported"));
                }
            }
            "VAR" => {
                let (l, v) = take!();
                let mut it = v.split_whitespace();
                nvars = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err(l, "bad VAR header"))?;
                let groups: usize = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err(l, "bad VAR header"))?;
                let mut seen = 0usize;
                for _ in 0..groups {
                    let (l, g) = take!();
                    let mut it = g.split_whitespace();
                    let code = it.next().ok_or_else(|| err(l, "bad VAR group"))?;
                    if code != "F" {
                        return Err(err(l, "only free variables are supported"));
                    }
                    let size: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(l, "bad VAR group"))?;
                    seen += size;
                }
                if seen != nvars {
                    return Err(err(l, "VAR group sizes do not sum to the count"));
                }
                doc.var_keys = (0..nvars).map(|i| VarKey::Scalar(format!("x{i}"))).collect();
            }
            "CON" => {
                let (l, v) = take!();
                let mut it = v.split_whitespace();
                let rows: usize = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err(l, "bad CON header"))?;
                let groups: usize = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err(l, "bad CON header"))?;
                let mut seen = 0usize;
                for _ in 0..groups {
                    let (l, g) = take!();
                    let mut it = g.split_whitespace();
                    let code = it
                        .next()
                        .and_then(ConeCode::from_token)
                        .ok_or_else(|| err(l, "unknown cone code"))?;
                    let size: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(l, "bad cone size"))?;
                    doc.con_blocks.push((code, size));
                    seen += size;
                }
                if seen != rows {
                    return Err(err(l, "CON block sizes do not sum to the row count"));
                }
            }
            "PSDCON" => {
                let (l, v) = take!();
                let count: usize = v.parse().map_err(|_| err(l, "bad PSDCON count"))?;
                for _ in 0..count {
                    let (l, d) = take!();
                    doc.psd_con_dims
                        .push(d.parse().map_err(|_| err(l, "bad PSDCON dim"))?);
                }
            }
            "PSDVAR" => {
                let (l, v) = take!();
                let count: usize = v.parse().map_err(|_| err(l, "bad PSDVAR count"))?;
                for _ in 0..count {
                    let (l, d) = take!();
                    doc.psd_var_dims
                        .push(d.parse().map_err(|_| err(l, "bad PSDVAR dim"))?);
                }
            }
            "OBJACOORD" => {
                let (l, v) = take!();
                let count: usize = v.parse().map_err(|_| err(l, "bad count"))?;
                for _ in 0..count {
                    let (l, e) = take!();
                    let mut it = e.split_whitespace();
                    let var: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(l, "bad OBJACOORD"))?;
                    let coef: f64 = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(l, "bad OBJACOORD"))?;
                    doc.obj_coords.push((var, coef));
                }
            }
            "OBJBCOORD" => {
                let (l, v) = take!();
                doc.obj_const = v.parse().map_err(|_| err(l, "bad OBJBCOORD"))?;
            }
            "ACOORD" => {
                let (l, v) = take!();
                let count: usize = v.parse().map_err(|_| err(l, "bad count"))?;
                for _ in 0..count {
                    let (l, e) = take!();
                    let mut it = e.split_whitespace();
                    let row: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(l, "bad ACOORD"))?;
                    let var: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(l, "bad ACOORD"))?;
                    let coef: f64 = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(l, "bad ACOORD"))?;
                    doc.a_coords.push((row, var, coef));
                }
            }
            "BCOORD" => {
                let (l, v) = take!();
                let count: usize = v.parse().map_err(|_| err(l, "bad count"))?;
                for _ in 0..count {
                    let (l, e) = take!();
                    let mut it = e.split_whitespace();
                    let row: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(l, "bad BCOORD"))?;
                    let c: f64 = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(l, "bad BCOORD"))?;
                    doc.b_coords.push((row, c));
                }
            }
            "HCOORD" => {
                let (l, v) = take!();
                let count: usize = v.parse().map_err(|_| err(l, "bad count"))?;
                for _ in 0..count {
                    let (l, e) = take!();
                    let ts: Vec<&str> = e.split_whitespace().collect();
                    if ts.len() != 5 {
                        return Err(err(l, "bad HCOORD"));
                    }
                    doc.h_coords.push((
                        ts[0].parse().map_err(|_| err(l, "bad HCOORD"))?,
                        ts[1].parse().map_err(|_| err(l, "bad HCOORD"))?,
                        ts[2].parse().map_err(|_| err(l, "bad HCOORD"))?,
                        ts[3].parse().map_err(|_| err(l, "bad HCOORD"))?,
                        ts[4].parse().map_err(|_| err(l, "bad HCOORD"))?,
                    ));
                }
            }
            "DCOORD" => {
                let (l, v) = take!();
                let count: usize = v.parse().map_err(|_| err(l, "bad count"))?;
                for _ in 0..count {
                    let (l, e) = take!();
                    let ts: Vec<&str> = e.split_whitespace().collect();
                    if ts.len() != 4 {
                        return Err(err(l, "bad DCOORD"));
                    }
                    doc.d_coords.push((
                        ts[0].parse().map_err(|_| err(l, "bad DCOORD"))?,
                        ts[1].parse().map_err(|_| err(l, "bad DCOORD"))?,
                        ts[2].parse().map_err(|_| err(l, "bad DCOORD"))?,
                        ts[3].parse().map_err(|_| err(l, "bad DCOORD"))?,
                    ));
                }
            }
            other => {
                return Err(err(ln, &format!("unknown section `{other}`")));
            }
        }
    }
    for (_, v, _) in &doc.a_coords {
        if *v >= nvars {
            return Err(err(0, "ACOORD variable out of range"));
        }
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvxc_core::canon::canonicalize;
    use cvxc_core::parser::parse_problem;

    #[test]
    fn minimal_problem_document() {
        let reg = AtomRegistry::builtin();
        let p = parse_problem(
            "optimization (x : R) minimize x subject to c : posOrthCone x",
            &reg,
        )
        .unwrap();
        let (q, _) = canonicalize(&p, &reg).unwrap();
        let doc = build_cbf(&q, &reg).unwrap();
        assert_eq!(doc.nvars(), 1);
        assert_eq!(doc.con_blocks, vec![(ConeCode::Nonneg, 1)]);
        assert_eq!(doc.obj_coords, vec![(0, 1.0)]);
        let text = render_cbf(&doc);
        assert!(text.contains("VER\n3"));
        assert!(text.contains("L+ 1"));
    }

    #[test]
    fn so1_reduced_blocks() {
        let reg = AtomRegistry::builtin();
        let p = parse_problem(
            "optimization (x y : R)
  maximize sqrt (x - y)
  subject to
    c1 : y = 2*x - 3
    c2 : x^2 <= 2
    c3 : 0 <= x - y
",
            &reg,
        )
        .unwrap();
        let (q, _) = canonicalize(&p, &reg).unwrap();
        let doc = build_cbf(&q, &reg).unwrap();
        assert_eq!(doc.nvars(), 4);
        assert_eq!(
            doc.con_blocks,
            vec![
                (ConeCode::Zero, 1),
                (ConeCode::Nonneg, 1),
                (ConeCode::RotatedQuad, 3),
                (ConeCode::RotatedQuad, 3),
            ]
        );
    }

    #[test]
    fn roundtrip_read_write() {
        let reg = AtomRegistry::builtin();
        let p = parse_problem(
            "optimization (x y : R)
  maximize sqrt (x - y)
  subject to
    c1 : y = 2*x - 3
    c2 : x^2 <= 2
    c3 : 0 <= x - y
",
            &reg,
        )
        .unwrap();
        let (q, _) = canonicalize(&p, &reg).unwrap();
        let doc = build_cbf(&q, &reg).unwrap();
        let text = render_cbf(&doc);
        let back = read_cbf(&text).unwrap();
        assert_eq!(back.con_blocks, doc.con_blocks);
        assert_eq!(back.a_coords, doc.a_coords);
        assert_eq!(back.b_coords, doc.b_coords);
        assert_eq!(back.obj_coords, doc.obj_coords);
        assert_eq!(back.nvars(), doc.nvars());
    }

    #[test]
    fn empty_constraints_have_no_con_block() {
        let reg = AtomRegistry::builtin();
        let p = parse_problem("optimization (x : R) minimize x", &reg).unwrap();
        let (q, _) = canonicalize(&p, &reg).unwrap();
        let text = write_cbf(&q, &reg).unwrap();
        assert!(!text.contains("CON\n"));
        assert!(text.contains("VAR\n1 1\nF 1"));
    }

    #[test]
    fn logdet_problem_emits_psd_block() {
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
        assert_eq!(doc.psd_con_dims, vec![4]);
        assert!(!doc.h_coords.is_empty());
        // 3 entries of S + 2 of t + 3 of Y.
        assert_eq!(doc.nvars(), 8);
        let text = render_cbf(&doc);
        let back = read_cbf(&text).unwrap();
        assert_eq!(back.h_coords, doc.h_coords);
        assert_eq!(back.psd_con_dims, doc.psd_con_dims);
    }
}
