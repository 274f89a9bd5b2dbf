//! Dense linear-algebra kernels: vector p-norms, singular values, nuclear
//! norm, Frobenius norm.
//!
//! All functions here are pure; values are validated once, at construction of
//! [`NumericArray`], so downstream code never sees NaN or infinity.

mod jacobi;

pub use jacobi::{Svd, SvdOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("expected a vector (cols = 1), got shape {rows}x{cols}")]
    NotAVector { rows: usize, cols: usize },
    #[error("p must be positive, got {p}")]
    NonPositiveP { p: f64 },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("shape {rows}x{cols} has an empty dimension")]
    EmptyShape { rows: usize, cols: usize },
    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("matrix {rows}x{cols} exceeds the dimension cap {cap}")]
    DimensionCap { rows: usize, cols: usize, cap: usize },
    #[error("no convergence after {sweeps} sweeps, max off-diagonal ratio {off_diagonal:e}")]
    Convergence { sweeps: usize, off_diagonal: f64 },
}

/// Dense vector or row-major matrix of finite `f64` values.
///
/// `cols == 1` denotes a vector. Both dimensions are at least 1 and every
/// entry is finite; the constructors reject anything else, so holding a
/// `NumericArray` is proof of validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArray", into = "RawArray")]
pub struct NumericArray {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Wire shape of `NumericArray`; re-validated on deserialization.
#[derive(Serialize, Deserialize)]
struct RawArray {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawArray> for NumericArray {
    type Error = LinalgError;
    fn try_from(raw: RawArray) -> Result<Self, LinalgError> {
        NumericArray::matrix(raw.rows, raw.cols, raw.data)
    }
}

impl From<NumericArray> for RawArray {
    fn from(a: NumericArray) -> Self {
        RawArray { rows: a.rows, cols: a.cols, data: a.data }
    }
}

impl NumericArray {
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch { rows, cols, len: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    /// Column vector (shape n x 1).
    pub fn vector(data: Vec<f64>) -> Result<Self, LinalgError> {
        let rows = data.len();
        Self::matrix(rows, 1, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::matrix(rows, cols, vec![0.0; rows * cols]).expect("zero matrix is valid")
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n, n);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
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

    pub fn is_vector(&self) -> bool {
        self.cols == 1
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Row-major view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&self, c: f64) -> Result<Self, LinalgError> {
        Self::matrix(self.rows, self.cols, self.data.iter().map(|v| v * c).collect())
    }
}

/// Non-negative singular values in non-increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    values: Vec<f64>,
}

impl SingularSpectrum {
    fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|&s| s >= 0.0));
        debug_assert!(values.windows(2).all(|w| w[0] >= w[1]));
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn top_k(&self, k: usize) -> &[f64] {
        &self.values[..k]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `(sum_i |x_i|^p)^(1/p)` for a vector and p > 0.
///
/// For p < 1 this is the literal formula, not a norm; the harness treats it
/// as a target function either way.
pub fn pnorm(x: &NumericArray, p: f64) -> Result<f64, LinalgError> {
    if !x.is_vector() {
        return Err(LinalgError::NotAVector { rows: x.rows, cols: x.cols });
    }
    if !(p > 0.0) || !p.is_finite() {
        return Err(LinalgError::NonPositiveP { p });
    }
    let sum: f64 = x.data.iter().map(|v| v.abs().powf(p)).sum();
    Ok(sum.powf(1.0 / p))
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(a: &NumericArray) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// All `min(rows, cols)` singular values, sorted descending.
pub fn svd_values(a: &NumericArray) -> Result<SingularSpectrum, LinalgError> {
    let svd = jacobi::decompose(a, &SvdOptions::default(), false)?;
    Ok(SingularSpectrum::new(svd.sigma))
}

/// Full thin decomposition `A = U diag(sigma) V^T` with orthonormal columns
/// in U (m x k) and V (n x k), k = min(m, n).
pub fn svd(a: &NumericArray) -> Result<Svd, LinalgError> {
    jacobi::decompose(a, &SvdOptions::default(), true)
}

/// Full decomposition with explicit tolerance / sweep-cap / size-cap knobs.
pub fn svd_with_options(a: &NumericArray, opts: &SvdOptions) -> Result<Svd, LinalgError> {
    jacobi::decompose(a, opts, true)
}

/// First k singular values, descending. Requires 1 <= k <= min(rows, cols).
pub fn top_k_singular_values(a: &NumericArray, k: usize) -> Result<Vec<f64>, LinalgError> {
    let max = a.rows.min(a.cols);
    if k == 0 || k > max {
        return Err(LinalgError::KOutOfRange { k, max });
    }
    Ok(svd_values(a)?.top_k(k).to_vec())
}

/// Sum of all singular values.
pub fn nuclear_norm(a: &NumericArray) -> Result<f64, LinalgError> {
    Ok(svd_values(a)?.sum())
}
