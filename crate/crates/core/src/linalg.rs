//! Small dense matrices.
//!
//! The compiler only ever manipulates matrices of modest size (the log-det
//! graph implementation produces blocks of dimension `2n` for an `n`-by-`n`
//! argument), so everything here is a straightforward dense implementation.

use alloc::vec;
use alloc::vec::Vec;
use serde::Serialize;

use crate::num;

/// Dense row-major matrix, used for intermediate values during evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = 1.0;
        }
        m
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *t.at_mut(j, i) = self.at(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Option<Mat> {
        if self.cols != other.rows {
            return None;
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    *out.at_mut(i, j) += a * other.at(k, j);
                }
            }
        }
        Some(out)
    }

    /// Keep the diagonal, zero everything else.
    pub fn diag_part(&self) -> Mat {
        let mut d = Mat::zeros(self.rows, self.cols);
        for i in 0..self.rows.min(self.cols) {
            *d.at_mut(i, i) = self.at(i, i);
        }
        d
    }

    /// Keep the upper triangle including the diagonal, zero the rest.
    pub fn upper_part(&self) -> Mat {
        let mut u = Mat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in i..self.cols {
                *u.at_mut(i, j) = self.at(i, j);
            }
        }
        u
    }

    /// `[[a, b], [c, d]]` block assembly; all blocks must be square of equal size.
    pub fn block2(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Option<Mat> {
        let n = a.rows;
        for m in [a, b, c, d] {
            if m.rows != n || m.cols != n {
                return None;
            }
        }
        let mut out = Mat::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                *out.at_mut(i, j) = a.at(i, j);
                *out.at_mut(i, n + j) = b.at(i, j);
                *out.at_mut(n + i, j) = c.at(i, j);
                *out.at_mut(n + i, n + j) = d.at(i, j);
            }
        }
        Some(out)
    }

    /// Symmetric matrix whose upper triangle is taken from `self`.
    pub fn symmetrize_upper(&self) -> Option<Mat> {
        if !self.is_square() {
            return None;
        }
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in 0..i {
                *s.at_mut(i, j) = self.at(j, i);
            }
        }
        Some(s)
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = num::max(worst, num::abs(self.at(i, j) - self.at(j, i)));
            }
        }
        worst
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn chol_lower(a: &Mat) -> Option<Mat> {
    if !a.is_square() {
        return None;
    }
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a.at(j, j);
        for k in 0..j {
            d -= l.at(j, k) * l.at(j, k);
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let pivot = num::sqrt(d);
        *l.at_mut(j, j) = pivot;
        for i in (j + 1)..n {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            *l.at_mut(i, j) = s / pivot;
        }
    }
    Some(l)
}

/// Determinant by LU with partial pivoting.
pub fn det(a: &Mat) -> Option<f64> {
    if !a.is_square() {
        return None;
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut sign = 1.0;
    for col in 0..n {
        let mut pivot_row = col;
        let mut best = num::abs(m.at(col, col));
        for r in (col + 1)..n {
            let v = num::abs(m.at(r, col));
            if v > best {
                best = v;
                pivot_row = r;
            }
        }
        if best == 0.0 {
            return Some(0.0);
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = m.at(col, j);
                *m.at_mut(col, j) = m.at(pivot_row, j);
                *m.at_mut(pivot_row, j) = tmp;
            }
            sign = -sign;
        }
        let pivot = m.at(col, col);
        for r in (col + 1)..n {
            let f = m.at(r, col) / pivot;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                *m.at_mut(r, j) -= f * m.at(col, j);
            }
        }
    }
    let mut d = sign;
    for i in 0..n {
        d *= m.at(i, i);
    }
    Some(d)
}

/// Inverse by Gauss-Jordan elimination; `None` when singular.
pub fn inv(a: &Mat) -> Option<Mat> {
    if !a.is_square() {
        return None;
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut out = Mat::identity(n);
    for col in 0..n {
        let mut pivot_row = col;
        let mut best = num::abs(m.at(col, col));
        for r in (col + 1)..n {
            let v = num::abs(m.at(r, col));
            if v > best {
                best = v;
                pivot_row = r;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = m.at(col, j);
                *m.at_mut(col, j) = m.at(pivot_row, j);
                *m.at_mut(pivot_row, j) = tmp;
                let tmp = out.at(col, j);
                *out.at_mut(col, j) = out.at(pivot_row, j);
                *out.at_mut(pivot_row, j) = tmp;
            }
        }
        let pivot = m.at(col, col);
        for j in 0..n {
            *m.at_mut(col, j) /= pivot;
            *out.at_mut(col, j) /= pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m.at(r, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                let mc = m.at(col, j);
                let oc = out.at(col, j);
                *m.at_mut(r, j) -= f * mc;
                *out.at_mut(r, j) -= f * oc;
            }
        }
    }
    Some(out)
}

/// Minimum eigenvalue of a symmetric matrix via cyclic Jacobi sweeps.
pub fn sym_eig_min(a: &Mat) -> Option<f64> {
    if !a.is_square() {
        return None;
    }
    let n = a.rows;
    if n == 0 {
        return None;
    }
    if n == 1 {
        return Some(a.at(0, 0));
    }
    let mut m = a.clone();
    // Work on the symmetrized copy so tiny asymmetries do not matter.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m.at(i, j) + m.at(j, i));
            *m.at_mut(i, j) = v;
            *m.at_mut(j, i) = v;
        }
    }
    let scale = {
        let mut s = 0.0;
        for v in &m.data {
            s = num::max(s, num::abs(*v));
        }
        num::max(s, 1.0)
    };
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off = num::max(off, num::abs(m.at(i, j)));
            }
        }
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if num::abs(apq) <= 1e-16 * scale {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + num::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + num::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / num::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut lo = m.at(0, 0);
    for i in 1..n {
        lo = num::min(lo, m.at(i, i));
    }
    Some(lo)
}

/// Symmetric matrix stored as its upper triangle, row major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymMat {
    n: usize,
    upper: Vec<f64>,
}

impl SymMat {
    pub fn zeros(n: usize) -> Self {
        SymMat {
            n,
            upper: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.upper[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.upper[k] = v;
    }

    /// Upper-triangle entries in row-major order, the canonical coordinate
    /// layout used for sampling, grids and file emission.
    pub fn upper_entries(&self) -> &[f64] {
        &self.upper
    }

    pub fn upper_entries_mut(&mut self) -> &mut [f64] {
        &mut self.upper
    }

    /// Number of upper-triangle coordinates of an `n`-by-`n` symmetric matrix.
    pub fn coord_count(n: usize) -> usize {
        n * (n + 1) / 2
    }

    /// Row-major upper-triangle coordinate order: (0,0), (0,1), ..., (1,1), ...
    pub fn coords(n: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                *m.at_mut(i, j) = self.at(i, j);
            }
        }
        m
    }

    pub fn from_dense(m: &Mat) -> Option<SymMat> {
        if !m.is_square() {
            return None;
        }
        let mut s = SymMat::zeros(m.rows);
        for (i, j) in SymMat::coords(m.rows) {
            s.set(i, j, 0.5 * (m.at(i, j) + m.at(j, i)));
        }
        Some(s)
    }

    pub fn all_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chol_recovers_matrix() {
        let mut a = Mat::zeros(2, 2);
        *a.at_mut(0, 0) = 4.0;
        *a.at_mut(0, 1) = 2.0;
        *a.at_mut(1, 0) = 2.0;
        *a.at_mut(1, 1) = 3.0;
        let l = chol_lower(&a).unwrap();
        let back = l.matmul(&l.transpose()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((back.at(i, j) - a.at(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn det_and_inv_agree() {
        let mut a = Mat::zeros(3, 3);
        let vals = [2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        a.data.copy_from_slice(&vals);
        let d = det(&a).unwrap();
        assert!((d - 18.0).abs() < 1e-10);
        let ai = inv(&a).unwrap();
        let prod = a.matmul(&ai).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.at(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eig_min_of_indefinite_matrix() {
        let mut a = Mat::zeros(2, 2);
        *a.at_mut(0, 0) = 1.0;
        *a.at_mut(0, 1) = 2.0;
        *a.at_mut(1, 0) = 2.0;
        *a.at_mut(1, 1) = 1.0;
        // Eigenvalues are 3 and -1.
        let lo = sym_eig_min(&a).unwrap();
        assert!((lo + 1.0).abs() < 1e-10);
    }

    #[test]
    fn symmat_roundtrip() {
        let mut s = SymMat::zeros(3);
        s.set(0, 1, 5.0);
        s.set(2, 2, -1.0);
        assert_eq!(s.at(1, 0), 5.0);
        let d = s.to_dense();
        let s2 = SymMat::from_dense(&d).unwrap();
        assert_eq!(s, s2);
    }
}
