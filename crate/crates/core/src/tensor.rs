//! Dense row-major tensors and matrices, generic over `f32`/`f64`.
//!
//! Everything downstream (transforms, layers, the trainer) runs in either
//! precision: `f64` for correctness work, `f32` for benchmark paths. The
//! [`Element`] trait is the small surface both share. Accumulation order in
//! [`Matrix::matmul`] is fixed (k ascending per output element) so repeated
//! runs are bit-identical.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

// ── element types ──────────────────────────────────────────────────────────

/// On-disk scalar type tag. Codes match the `.lrt` header byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            c => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }

    /// Bytes per element.
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Scalar element: `f32` or `f64`.
pub trait Element:
    Copy
    + Default
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const DTYPE: DType = DType::F32;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f32::ln(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const DTYPE: DType = DType::F64;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

// ── tensor ──────────────────────────────────────────────────────────────────

/// N-dimensional dense tensor, row-major (last axis contiguous).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Element> {
    dims: Vec<usize>,
    data: Vec<S>,
}

impl<S: Element> Tensor<S> {
    pub fn new(dims: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("tensor needs at least one axis".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-length axis in {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} imply {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    /// All-zero tensor. Panics on an invalid shape; use [`Tensor::new`] when
    /// the dims come from untrusted input.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(
            !dims.is_empty() && dims.iter().all(|&d| d > 0),
            "invalid dims {dims:?}"
        );
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![S::ZERO; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    /// Element at a 3-axis index. Only valid for 3-d tensors.
    #[inline(always)]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> S {
        debug_assert_eq!(self.dims.len(), 3);
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    /// Largest |element|, as f64.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.to_f64().abs()))
    }

    /// Convert every element through f64 into another precision.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

// ── matrix ──────────────────────────────────────────────────────────────────

/// 2-d row-major matrix. Rows are contiguous, which the hot loops
/// (elementwise stage, GEMM) rely on.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S: Element> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Element> Matrix<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::ONE;
        }
        m
    }

    /// Build from a nested-array literal, mostly for hard-coded constants.
    pub fn from_rows(rows: &[&[S]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline(always)]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline(always)]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline(always)]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix<S> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * rhs`. Panics on inner-dimension mismatch (caller bug, not input).
    pub fn matmul(&self, rhs: &Matrix<S>) -> Matrix<S> {
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        self.matmul_into(rhs, &mut out);
        out
    }

    /// GEMM with a caller-provided output. Per output element the inner sum
    /// runs over k ascending, so results are bit-reproducible; the 4-row
    /// blocking only changes which outputs are in flight, not any sum order.
    pub fn matmul_into(&self, rhs: &Matrix<S>, out: &mut Matrix<S>) {
        assert_eq!(self.cols, rhs.rows, "inner dimension mismatch");
        assert_eq!(out.rows, self.rows, "output rows mismatch");
        assert_eq!(out.cols, rhs.cols, "output cols mismatch");
        let (m, kk, n) = (self.rows, self.cols, rhs.cols);
        out.data.fill(S::ZERO);
        let mut i = 0;
        while i + 4 <= m {
            // Four output rows share each rhs row load.
            let (c01, c23) = out.data[i * n..(i + 4) * n].split_at_mut(2 * n);
            let (c0, c1) = c01.split_at_mut(n);
            let (c2, c3) = c23.split_at_mut(n);
            for k in 0..kk {
                let a0 = self.data[i * kk + k];
                let a1 = self.data[(i + 1) * kk + k];
                let a2 = self.data[(i + 2) * kk + k];
                let a3 = self.data[(i + 3) * kk + k];
                let b = &rhs.data[k * n..(k + 1) * n];
                for j in 0..n {
                    let bj = b[j];
                    c0[j] += a0 * bj;
                    c1[j] += a1 * bj;
                    c2[j] += a2 * bj;
                    c3[j] += a3 * bj;
                }
            }
            i += 4;
        }
        while i < m {
            let c = &mut out.data[i * n..(i + 1) * n];
            for k in 0..kk {
                let a = self.data[i * kk + k];
                let b = &rhs.data[k * n..(k + 1) * n];
                for j in 0..n {
                    c[j] += a * b[j];
                }
            }
            i += 1;
        }
    }

    /// Copy the listed columns (in the given order) into a narrower matrix.
    pub fn gather_cols(&self, cols: &[usize]) -> Result<Matrix<S>> {
        let mut out = Matrix::zeros(self.rows, cols.len());
        self.gather_cols_into(cols, &mut out)?;
        Ok(out)
    }

    /// [`Self::gather_cols`] into a caller-owned destination, so repeated
    /// gathers (per-inference column extraction) reuse one allocation.
    pub fn gather_cols_into(&self, cols: &[usize], out: &mut Matrix<S>) -> Result<()> {
        if out.cols != cols.len() {
            return Err(Error::Shape(format!(
                "gather destination has {} columns, need {}",
                out.cols,
                cols.len()
            )));
        }
        self.gather_cols_into_padded(cols, out)
    }

    /// [`Self::gather_cols_into`] where `out` may be wider than `cols`:
    /// the gathered values land in the leading columns and any trailing
    /// lane-padding columns are left untouched.
    pub fn gather_cols_into_padded(&self, cols: &[usize], out: &mut Matrix<S>) -> Result<()> {
        for &c in cols {
            if c >= self.cols {
                return Err(Error::Shape(format!(
                    "gather column {c} out of range (cols={})",
                    self.cols
                )));
            }
        }
        if out.rows != self.rows || out.cols < cols.len() {
            return Err(Error::Shape(format!(
                "gather destination is {}x{}, need {}x at least {}",
                out.rows,
                out.cols,
                self.rows,
                cols.len()
            )));
        }
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (j, &c) in cols.iter().enumerate() {
                dst[j] = src[c];
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.to_f64().abs()))
    }

    pub fn cast<T: Element>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

// ── tests ───────────────────────────────────────────────────────────────────
