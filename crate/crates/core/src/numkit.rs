//! Small dense linear algebra with the order-theoretic predicates used by
//! interval observers: Metzler tests, elementwise comparisons, positive and
//! negative splits, and Hurwitz certificates for Metzler matrices.
//!
//! Dimensions are observer-design scale (a handful of states), so everything
//! is dense, row-major and allocation-per-result.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("expected {expected} entries for the declared shape, got {got}")]
    EntryCount { expected: usize, got: usize },
    #[error("ragged rows: row {row} has {got} entries, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("matrix is singular (pivot {pivot:e} in column {col})")]
    Singular { col: usize, pivot: f64 },
}

/// Relative pivot threshold for the LU factorization.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// Real vector with finite entries.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self, NumError> {
        if let Some(index) = entries.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { index });
        }
        Ok(Vector(entries))
    }

    /// Wraps values produced inside the crate without re-checking finiteness.
    /// Simulation states may legitimately overflow before divergence is flagged.
    pub(crate) fn raw(entries: Vec<f64>) -> Self {
        Vector(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Vector(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn add(&self, other: &[f64]) -> Vector {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Vector {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * s).collect())
    }

    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `a <= b` componentwise.
pub fn elementwise_leq(a: &[f64], b: &[f64]) -> Result<bool, NumError> {
    if a.len() != b.len() {
        return Err(NumError::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).all(|(x, y)| x <= y))
}

/// Dense real matrix, row-major, finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if rows == 0 || cols == 0 {
            return Err(NumError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(NumError::EntryCount {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { index });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(NumError::Ragged {
                    row,
                    expected: ncols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::new(nrows, ncols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vector {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        Vector::raw((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matrix product dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "matrix sum shape mismatch");
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.shape(),
            other.shape(),
            "matrix difference shape mismatch"
        );
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|a| a * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|a| a.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn lu(&self) -> Result<Lu, NumError> {
        Lu::factor(self)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vector, NumError> {
        Ok(self.lu()?.solve(b))
    }

    pub fn inverse(&self) -> Result<Matrix, NumError> {
        let lu = self.lu()?;
        let n = self.rows;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = lu.solve(&e);
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        Ok(inv)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries((0..self.rows).map(|i| self.row(i)))
            .finish()
    }
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    // unit-lower L below the diagonal, U on and above
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(m: &Matrix) -> Result<Lu, NumError> {
        if !m.is_square() {
            return Err(NumError::NotSquare {
                rows: m.rows,
                cols: m.cols,
            });
        }
        let n = m.rows;
        let scale = m.norm_inf();
        let tol = SINGULAR_PIVOT_RATIO * scale;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (pivot_row, pivot_abs) =
                (col..n)
                    .map(|r| (r, lu[r * n + col].abs()))
                    .fold(
                        (col, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pivot_abs <= tol || scale == 0.0 {
                return Err(NumError::Singular {
                    col,
                    pivot: pivot_abs,
                });
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, pivot_row * n + j);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = lu[col * n + col];
            for r in col + 1..n {
                let factor = lu[r * n + col] / pivot;
                lu[r * n + col] = factor;
                if factor != 0.0 {
                    for j in col + 1..n {
                        lu[r * n + j] -= factor * lu[col * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vector {
        assert_eq!(b.len(), self.n, "right-hand side dimension mismatch");
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        Vector::raw(x)
    }
}

/// True iff every off-diagonal entry is nonnegative (no tolerance).
pub fn is_metzler(m: &Matrix) -> Result<bool, NumError> {
    Ok(metzler_violations(m)?.is_empty())
}

/// Off-diagonal entries `(row, col, value)` that are negative.
pub fn metzler_violations(m: &Matrix) -> Result<Vec<(usize, usize, f64)>, NumError> {
    if !m.is_square() {
        return Err(NumError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && m.get(i, j) < 0.0 {
                out.push((i, j, m.get(i, j)));
            }
        }
    }
    Ok(out)
}

/// `M = M⁺ − M⁻` with `M⁺ = max(M, 0)` and `M⁻ = M⁺ − M`, both entrywise nonnegative.
pub fn positive_split(m: &Matrix) -> (Matrix, Matrix) {
    let plus = m.map(|a| a.max(0.0));
    let minus = plus.sub(m);
    (plus, minus)
}

/// Witness `(v, ε)` with `v ≫ 0`, `ε > 0` and `[M v]_i ≤ −ε v_i` for every row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// 1-based index of the certified gain.
    pub gain_index: usize,
    pub v: Vector,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("certificate vector entry {index} is not strictly positive ({value})")]
    NonPositive { index: usize, value: f64 },
    #[error("certificate rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("row {row}: [Mv]_i = {lhs} exceeds -eps*v_i = {rhs}")]
    RowViolated { row: usize, lhs: f64, rhs: f64 },
    #[error(transparent)]
    Shape(#[from] NumError),
}

impl Certificate {
    /// Checks the row inequalities for `m` exactly (tolerance 0).
    pub fn verify(
        m: &Matrix,
        gain_index: usize,
        v: Vector,
        epsilon: f64,
    ) -> Result<Self, CertificateError> {
        if !m.is_square() {
            return Err(NumError::NotSquare {
                rows: m.rows,
                cols: m.cols,
            }
            .into());
        }
        if v.dim() != m.rows {
            return Err(NumError::DimMismatch {
                left: m.rows,
                right: v.dim(),
            }
            .into());
        }
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
            return Err(CertificateError::NonPositive { index, value });
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(CertificateError::NonPositiveRate(epsilon));
        }
        let mv = m.mul_vec(&v);
        for row in 0..m.rows {
            let rhs = -epsilon * v[row];
            if mv[row] > rhs {
                return Err(CertificateError::RowViolated {
                    row,
                    lhs: mv[row],
                    rhs,
                });
            }
        }
        Ok(Certificate {
            gain_index,
            v,
            epsilon,
        })
    }

    /// Same `v` with `ε` lowered to what it still witnesses on every matrix
    /// in `mats`; `None` if that rate is not positive.
    pub fn restrict_to<'a>(
        &self,
        mats: impl IntoIterator<Item = &'a Matrix>,
    ) -> Option<Certificate> {
        let mut eps = self.epsilon;
        let mut all = Vec::new();
        for m in mats {
            eps = eps.min(witnessed_rate(m, &self.v));
            all.push(m);
        }
        all.into_iter()
            .try_fold(self.clone(), |c, m| {
                Certificate::verify(m, c.gain_index, c.v.clone(), eps)
                    .ok()
                    .map(|_| c)
            })
            .map(|c| Certificate { epsilon: eps, ..c })
            .filter(|_| eps > 0.0)
    }

    /// `true` when the same `(v, ε)` also certifies `m`.
    pub fn holds_for(&self, m: &Matrix) -> bool {
        Certificate::verify(m, self.gain_index, self.v.clone(), self.epsilon).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CertificateOutcome {
    Feasible(Certificate),
    Infeasible,
}

impl CertificateOutcome {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            CertificateOutcome::Feasible(c) => Some(c),
            CertificateOutcome::Infeasible => None,
        }
    }

    pub fn into_certificate(self) -> Option<Certificate> {
        match self {
            CertificateOutcome::Feasible(c) => Some(c),
            CertificateOutcome::Infeasible => None,
        }
    }
}

/// Largest rate `v` witnesses for `m` as computed, `min_i (−[Mv]_i / v_i)`,
/// shaved by a few ulps so the exact row check passes.
pub fn witnessed_rate(m: &Matrix, v: &[f64]) -> f64 {
    let rate = m
        .mul_vec(v)
        .iter()
        .zip(v.iter())
        .map(|(r, vi)| -r / vi)
        .fold(f64::INFINITY, f64::min);
    rate * (1.0 - 8.0 * f64::EPSILON)
}

/// Canonical Hurwitz witness for a Metzler matrix: `v = −M⁻¹𝟙`.
///
/// For Metzler `M`, `−M⁻¹` is entrywise nonnegative exactly when `M` is
/// Hurwitz, so `v ≫ 0` iff a witness exists. The rate is taken from the
/// computed product, `ε = min_i (−[Mv]_i / v_i)`, shaved by a few ulps so the
/// exact row check passes; analytically this is `min_i 1/v_i`.
pub fn hurwitz_metzler_certificate(
    m: &Matrix,
    gain_index: usize,
) -> Result<CertificateOutcome, NumError> {
    if !m.is_square() {
        return Err(NumError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    let lu = match m.lu() {
        Ok(lu) => lu,
        Err(NumError::Singular { .. }) => return Ok(CertificateOutcome::Infeasible),
        Err(e) => return Err(e),
    };
    let rhs = vec![-1.0; n];
    let mut v = lu.solve(&rhs);
    // one step of iterative refinement
    let residual = rhs
        .iter()
        .zip(m.mul_vec(&v).iter())
        .map(|(b, mv)| b - mv)
        .collect::<Vec<_>>();
    let correction = lu.solve(&residual);
    v = v.add(&correction);

    if !v.is_finite() || v.iter().any(|&x| !(x > 0.0)) {
        return Ok(CertificateOutcome::Infeasible);
    }
    let epsilon = witnessed_rate(m, &v);
    match Certificate::verify(m, gain_index, v, epsilon) {
        Ok(c) => Ok(CertificateOutcome::Feasible(c)),
        Err(CertificateError::Shape(e)) => Err(e),
        Err(_) => Ok(CertificateOutcome::Infeasible),
    }
}
