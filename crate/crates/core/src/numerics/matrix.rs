use std::fmt;

use super::Scalar;
use crate::error::{ensure, Error, Result};

/// Dense row-major real matrix.
///
/// Products accumulate each output entry over the inner index in increasing
/// order, so a given precision always reproduces the same bits.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "matrix data has {} entries, expected {}x{}={}",
            data.len(),
            rows,
            cols,
            rows * cols
        );
        ensure!(data.iter().all(|v| v.is_finite()), "matrix data contains non-finite entries");
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        ensure!(rows.iter().all(|r| r.len() == cols), "ragged rows in matrix literal");
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Like [`Matrix::from_vec`] for kernels whose shapes are already known
    /// to agree.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn row_vector(values: &[T]) -> Self {
        Self::from_parts(1, values.len(), values.to_vec())
    }

    pub fn column_vector(values: &[T]) -> Self {
        Self::from_parts(values.len(), 1, values.to_vec())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(1, 1, vec![value])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Single-element value of a 1×1 matrix.
    pub fn item(&self) -> Result<T> {
        ensure!(self.shape() == (1, 1), "item() on a {:?} matrix", self.shape());
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        ensure!(self.cols == other.rows, "matmul dimension mismatch: {:?} x {:?}", self.shape(), other.shape());
        let out = gemm(self, other);
        finite_or_err(out, "matmul")
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        ensure!(self.cols == other.cols, "matmul_t dimension mismatch: {:?} x {:?}ᵀ", self.shape(), other.shape());
        finite_or_err(gemm_bt(self, other), "matmul_t")
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        ensure!(self.rows == other.rows, "t_matmul dimension mismatch: {:?}ᵀ x {:?}", self.shape(), other.shape());
        finite_or_err(gemm_at(self, other), "t_matmul")
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Matrix<T> {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix::from_parts(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    /// Largest entrywise absolute difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Matrix<T>) -> Result<T> {
        ensure!(
            self.shape() == other.shape(),
            "max_abs_diff shape mismatch: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        Ok(self.data.iter().zip(&other.data).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn slice_cols(&self, start: usize, width: usize) -> Matrix<T> {
        assert!(start + width <= self.cols, "column slice out of range");
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Matrix::from_parts(self.rows, width, data)
    }

    pub fn slice_rows(&self, start: usize, count: usize) -> Matrix<T> {
        assert!(start + count <= self.rows, "row slice out of range");
        Matrix::from_parts(count, self.cols, self.data[start * self.cols..(start + count) * self.cols].to_vec())
    }

    pub fn concat_cols(parts: &[Matrix<T>]) -> Result<Matrix<T>> {
        ensure!(!parts.is_empty(), "concat_cols of zero parts");
        let rows = parts[0].rows;
        ensure!(parts.iter().all(|p| p.rows == rows), "concat_cols row mismatch");
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Matrix::from_parts(rows, cols, data))
    }

    /// Converts to another precision. Values are rounded when narrowing.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix::from_parts(self.rows, self.cols, self.data.iter().map(|v| U::of(v.as_f64())).collect())
    }

    fn zip_with(&self, other: &Matrix<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Matrix<T>> {
        ensure!(self.shape() == other.shape(), "{what} shape mismatch: {:?} vs {:?}", self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        finite_or_err(Matrix::from_parts(self.rows, self.cols, data), what)
    }
}

fn finite_or_err<T: Scalar>(m: Matrix<T>, what: &str) -> Result<Matrix<T>> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::Numeric(format!("{what} produced non-finite values")))
    }
}

/// `a · b` without shape checks beyond a debug assertion.
pub(crate) fn gemm<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    debug_assert_eq!(a.cols, b.rows);
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Matrix::from_parts(n, m, out)
}

/// `a · bᵀ`.
pub(crate) fn gemm_bt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    debug_assert_eq!(a.cols, b.cols);
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] = dot(arow, &b.data[j * k..(j + 1) * k]);
        }
    }
    Matrix::from_parts(n, m, out)
}

/// `aᵀ · b`.
pub(crate) fn gemm_at<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    debug_assert_eq!(a.rows, b.rows);
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); n * m];
    for p in 0..k {
        let arow = &a.data[p * n..(p + 1) * n];
        let brow = &b.data[p * m..(p + 1) * m];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Matrix::from_parts(n, m, out)
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for c in 0..self.cols.min(8) {
                write!(f, "{:>10.5?} ", self.data[r * self.cols + c])?;
            }
            if self.cols > 8 {
                write!(f, "...")?;
            }
            writeln!(f)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}
