//! Dense matrices and a streaming least-squares solver.
//!
//! Storage is `f64` row-major. Tensors on disk are `f32`; conversion happens
//! only at the serialization boundary.

use std::fmt;
use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::tensor::{TensorBlock, TensorError};

/// Relative singular-value floor below which a system counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("{op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("least squares needs at least as many rows as columns ({rows} < {cols})")]
    Underdetermined { rows: usize, cols: usize },
    #[error(
        "rank deficient: smallest singular value {min_singular:e} vs largest {max_singular:e}; \
         column {column} is the weakest"
    )]
    RankDeficient {
        column: usize,
        min_singular: f64,
        max_singular: f64,
    },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                op: "Matrix::new",
                expected: format!("{} entries", rows * cols),
                found: format!("{}", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    op: "Matrix::from_rows",
                    expected: format!("{cols} columns"),
                    found: format!("{} in row {i}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self, LinalgError> {
        Ok(Self::from_rows(columns)?.transpose())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul",
                expected: format!("{} rows on the right", self.cols),
                found: format!("{}", other.rows),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                op: "mul_vec",
                expected: format!("length {}", self.cols),
                found: format!("{}", v.len()),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "tr_mul_vec",
                expected: format!("length {}", self.rows),
                found: format!("{}", v.len()),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &s) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * s;
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_same_shape(other, "sub")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Select the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.rows, k.min(self.cols), |i, j| self[(i, j)])
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<(), LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                op,
                expected: format!("{}x{}", self.rows, self.cols),
                found: format!("{}x{}", other.rows, other.cols),
            });
        }
        Ok(())
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub fn to_tensor(&self) -> TensorBlock {
        TensorBlock::from_f64(vec![self.rows, self.cols], &self.data)
            .expect("shape matches by construction")
    }

    pub fn from_tensor(t: &TensorBlock) -> Result<Self, TensorError> {
        match *t.dims() {
            [rows, cols] => Ok(Self {
                rows,
                cols,
                data: t.to_f64(),
            }),
            _ => Err(TensorError::ShapeMismatch {
                dims: t.dims().to_vec(),
                expected: 2,
                actual: t.dims().len(),
            }),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Least-squares solver that absorbs rows in blocks.
///
/// Keeps the triangular factor of the augmented system `[A | B]`, so memory
/// is `n x (n + p)` regardless of how many rows are pushed. `solve` checks the
/// singular values of the triangular factor (equal to those of `A`) before
/// back-substituting.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    n: usize,
    p: usize,
    rows_seen: usize,
    factor: DMatrix<f64>,
}

impl LeastSquares {
    pub fn new(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            rows_seen: 0,
            factor: DMatrix::zeros(0, n + p),
        }
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    /// Absorbs the rows of `a` (m x n) and `b` (m x p).
    pub fn push(&mut self, a: &Matrix, b: &Matrix) -> Result<(), LinalgError> {
        if a.cols != self.n || b.cols != self.p || a.rows != b.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "LeastSquares::push",
                expected: format!("m x {} and m x {}", self.n, self.p),
                found: format!("{}x{} and {}x{}", a.rows, a.cols, b.rows, b.cols),
            });
        }
        for (idx, v) in a.data.iter().chain(&b.data).enumerate() {
            if !v.is_finite() {
                let (m, cols) = if idx < a.data.len() {
                    (idx, a.cols)
                } else {
                    (idx - a.data.len(), b.cols)
                };
                return Err(LinalgError::NonFinite {
                    row: self.rows_seen + m / cols,
                    col: m % cols,
                });
            }
        }
        let n = self.n;
        self.push_rows(a.rows, |i, j| if j < n { a[(i, j)] } else { b[(i, j - n)] });
        Ok(())
    }

    /// Absorbs one row pair without building matrices.
    pub fn push_row(&mut self, a: &[f64], b: &[f64]) -> Result<(), LinalgError> {
        let a = Matrix::new(1, a.len(), a.to_vec())?;
        let b = Matrix::new(1, b.len(), b.to_vec())?;
        self.push(&a, &b)
    }

    fn push_rows(&mut self, m: usize, entry: impl Fn(usize, usize) -> f64) {
        let width = self.n + self.p;
        let prev = self.factor.nrows();
        let mut stacked = DMatrix::zeros(prev + m, width);
        stacked.rows_mut(0, prev).copy_from(&self.factor);
        for i in 0..m {
            for j in 0..width {
                stacked[(prev + i, j)] = entry(i, j);
            }
        }
        let r = stacked.qr().r();
        let keep = r.nrows().min(self.n);
        self.factor = r.rows(0, keep).into_owned();
        self.rows_seen += m;
    }

    /// Returns the `n x p` minimizer of `||A X - B||_F`.
    pub fn solve(&self) -> Result<Matrix, LinalgError> {
        if self.rows_seen < self.n || self.factor.nrows() < self.n {
            return Err(LinalgError::Underdetermined {
                rows: self.rows_seen,
                cols: self.n,
            });
        }
        let r = self.factor.view((0, 0), (self.n, self.n)).into_owned();
        let rhs = self.factor.view((0, self.n), (self.n, self.p)).into_owned();
        check_rank(&r)?;
        let x = r
            .solve_upper_triangular(&rhs)
            .ok_or(LinalgError::RankDeficient {
                column: 0,
                min_singular: 0.0,
                max_singular: 0.0,
            })?;
        Ok(Matrix::from_nalgebra(&x))
    }
}

fn check_rank(r: &DMatrix<f64>) -> Result<(), LinalgError> {
    let n = r.ncols();
    if n == 0 {
        return Ok(());
    }
    let svd = r.clone().svd(false, true);
    let sv = &svd.singular_values;
    let (mut imin, mut smin, mut smax) = (0, f64::INFINITY, 0.0f64);
    for (i, &s) in sv.iter().enumerate() {
        if s < smin {
            smin = s;
            imin = i;
        }
        smax = smax.max(s);
    }
    if smax == 0.0 || smin < RANK_TOLERANCE * smax {
        let v_t = svd.v_t.as_ref().expect("requested");
        let row = v_t.row(imin);
        let mut column = 0;
        let mut best = -1.0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                column = j;
            }
        }
        return Err(LinalgError::RankDeficient {
            column,
            min_singular: smin,
            max_singular: smax,
        });
    }
    Ok(())
}

/// Minimizes `||A X - B||_F` for `A` (m x n, m >= n, full column rank).
pub fn solve_least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.rows != b.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "solve_least_squares",
            expected: format!("{} rows in B", a.rows),
            found: format!("{}", b.rows),
        });
    }
    if a.rows < a.cols {
        return Err(LinalgError::Underdetermined {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let mut ls = LeastSquares::new(a.cols, b.cols);
    ls.push(a, b)?;
    ls.solve()
}

/// Orthonormalizes columns in place with two passes of modified Gram-Schmidt.
///
/// Fails with the index of the first column that is (numerically) dependent
/// on its predecessors.
pub fn orthonormalize_columns(m: &mut Matrix) -> Result<(), usize> {
    let (rows, cols) = (m.rows, m.cols);
    let mut columns: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    for j in 0..cols {
        let original = norm(&columns[j]);
        for _pass in 0..2 {
            for k in 0..j {
                let (done, rest) = columns.split_at_mut(j);
                let d = dot(&done[k], &rest[0]);
                for (x, q) in rest[0].iter_mut().zip(&done[k]) {
                    *x -= d * q;
                }
            }
        }
        let n = norm(&columns[j]);
        if !(n > 1e-12 * original.max(f64::MIN_POSITIVE)) || n == 0.0 {
            return Err(j);
        }
        columns[j].iter_mut().for_each(|x| *x /= n);
    }
    for (j, c) in columns.iter().enumerate() {
        for i in 0..rows {
            m[(i, j)] = c[i];
        }
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector vanishes.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system_returns_rhs() {
        let b = Matrix::from_rows(&[vec![1.0, -2.0], vec![3.5, 0.0], vec![7.0, 9.0]]).unwrap();
        let x = solve_least_squares(&Matrix::identity(3), &b).unwrap();
        assert!(x.sub(&b).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn exact_fit_column() {
        let a = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let x = solve_least_squares(&a, &b).unwrap();
        assert_eq!((x.rows(), x.cols()), (1, 1));
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_deficiency_names_column() {
        // third column duplicates the first
        let a = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![2.0, 1.0, 2.0],
            vec![1.0, 3.0, 1.0],
        ])
        .unwrap();
        let b = Matrix::zeros(4, 1);
        match solve_least_squares(&a, &b) {
            Err(LinalgError::RankDeficient { column, .. }) => assert!(column == 0 || column == 2),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn zero_matrix_is_rank_deficient() {
        let err = solve_least_squares(&Matrix::zeros(3, 2), &Matrix::zeros(3, 1)).unwrap_err();
        assert!(matches!(err, LinalgError::RankDeficient { .. }));
    }

    #[test]
    fn underdetermined_rejected() {
        let err = solve_least_squares(&Matrix::zeros(2, 3), &Matrix::zeros(2, 1)).unwrap_err();
        assert_eq!(err, LinalgError::Underdetermined { rows: 2, cols: 3 });
    }

    #[test]
    fn blockwise_push_matches_single_push() {
        let a = Matrix::from_fn(40, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + 0.1 * j as f64);
        let b = Matrix::from_fn(40, 2, |i, j| (i as f64).sin() + j as f64);
        let whole = solve_least_squares(&a, &b).unwrap();
        let mut ls = LeastSquares::new(3, 2);
        for chunk in 0..8 {
            let rows: Vec<Vec<f64>> = (chunk * 5..chunk * 5 + 5).map(|i| a.row(i).to_vec()).collect();
            let rhs: Vec<Vec<f64>> = (chunk * 5..chunk * 5 + 5).map(|i| b.row(i).to_vec()).collect();
            ls.push(&Matrix::from_rows(&rows).unwrap(), &Matrix::from_rows(&rhs).unwrap())
                .unwrap();
        }
        assert!(ls.solve().unwrap().sub(&whole).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn single_rows_below_n_then_enough() {
        let mut ls = LeastSquares::new(2, 1);
        ls.push_row(&[1.0, 0.0], &[2.0]).unwrap();
        assert!(matches!(ls.solve(), Err(LinalgError::Underdetermined { .. })));
        ls.push_row(&[0.0, 1.0], &[3.0]).unwrap();
        let x = ls.solve().unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-14 && (x[(1, 0)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_input_located() {
        let mut a = Matrix::identity(2);
        a[(1, 0)] = f64::NAN;
        let err = solve_least_squares(&a, &Matrix::zeros(2, 1)).unwrap_err();
        assert_eq!(err, LinalgError::NonFinite { row: 1, col: 0 });
    }

    #[test]
    fn gram_schmidt_orthonormal() {
        let mut m = Matrix::from_fn(5, 3, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        orthonormalize_columns(&mut m).unwrap();
        let g = m.transpose().matmul(&m).unwrap();
        assert!(g.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_detects_dependence() {
        let mut m = Matrix::from_columns(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        assert_eq!(orthonormalize_columns(&mut m), Err(1));
    }

    #[test]
    fn multiply_by_identity() {
        let a = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.5);
        assert_eq!(a.matmul(&Matrix::identity(3)).unwrap(), a);
    }
}
