//! Minimal dense matrix support for the small systems that show up here
//! (per-node Jacobians and KKT systems of at most a handful of rows).

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Self { rows: rows.len(), cols, data: rows.iter().flatten().copied().collect() })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn scalar(v: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        debug_assert_eq!(self.rows, self.cols);
        let half = T::lit(0.5);
        let mut s = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                s[(r, c)] = (self[(r, c)] + self[(c, r)]) * half;
            }
        }
        s
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| crate::scalar::dot(self.row(r), v)).collect()
    }

    /// `vᵀ A` as a row vector.
    pub fn vec_mul(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.rows);
        (0..self.cols).map(|c| (0..self.rows).map(|r| v[r] * self[(r, c)]).sum()).collect()
    }

    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                out[(r, c)] = (0..self.cols).map(|k| self[(r, k)] * other[(k, c)]).sum();
            }
        }
        out
    }

    /// `uᵀ A u`.
    pub fn quad_form(&self, u: &[T]) -> T {
        crate::scalar::dot(u, &self.mul_vec(u))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `rel_tol * max|A|`.
pub fn solve<T: Real>(a: &Matrix<T>, b: &[T], rel_tol: T) -> Option<Vec<T>> {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    debug_assert_eq!(n, b.len());
    let scale = a.max_abs();
    if n == 0 {
        return Some(Vec::new());
    }
    if scale.is_zero() {
        return None;
    }
    let threshold = scale * rel_tol;
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if m[(pivot, col)].abs() <= threshold {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(pivot, c)];
                m[(pivot, c)] = tmp;
            }
            x.swap(col, pivot);
        }
        for r in col + 1..n {
            let factor = m[(r, col)] / m[(col, col)];
            if factor.is_zero() {
                continue;
            }
            for c in col..n {
                let v = m[(col, c)];
                m[(r, c)] = m[(r, c)] - factor * v;
            }
            x[r] = x[r] - factor * x[col];
        }
    }
    for r in (0..n).rev() {
        let tail: T = (r + 1..n).map(|c| m[(r, c)] * x[c]).sum();
        x[r] = (x[r] - tail) / m[(r, r)];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
