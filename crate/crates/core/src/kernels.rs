//! Kernel functions, Gram matrices, and realized information gain.
//!
//! Two kernel families are supported: the squared-exponential kernel
//! `k(x, x') = exp(-||x - x'||^2 / (2 l^2))` and the linear kernel
//! `k(x, x') = <x, x'>`. Both are kept bounded by `k(x, x) <= 1`; linear
//! inputs are expected to be normalized into the unit ball (the beam
//! codebook guarantees this at construction).
//!
//! The realized information gain of an observed point set,
//! `(1/2) log det(I + K / lambda)`, stands in for the maximum information
//! gain wherever a gain value is needed: maximizing over subsets is
//! intractable, the realized value is computable from a Cholesky factor,
//! and it never exceeds the maximum, so confidence widths built from it
//! only get tighter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LowerTriangular;

/// Errors from kernel evaluation and Gram construction.
#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty point set")]
    EmptyPoints,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Kernel family plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelKind {
    SquaredExponential { length_scale: f64 },
    Linear,
}

/// A kernel together with the input dimension it operates on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    kind: KernelKind,
    input_dim: usize,
}

impl KernelSpec {
    /// Squared-exponential kernel with the given length scale.
    pub fn squared_exponential(length_scale: f64, input_dim: usize) -> Result<Self, KernelError> {
        if !(length_scale > 0.0) || !length_scale.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "length scale must be positive and finite, got {length_scale}"
            )));
        }
        if input_dim == 0 {
            return Err(KernelError::InvalidParameter("input dimension must be >= 1".into()));
        }
        Ok(Self { kind: KernelKind::SquaredExponential { length_scale }, input_dim })
    }

    /// Linear kernel; callers must keep inputs inside the unit ball.
    pub fn linear(input_dim: usize) -> Result<Self, KernelError> {
        if input_dim == 0 {
            return Err(KernelError::InvalidParameter("input dimension must be >= 1".into()));
        }
        Ok(Self { kind: KernelKind::Linear, input_dim })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Evaluate `k(x, y)`.
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<(), KernelError> {
        if x.len() != self.input_dim {
            return Err(KernelError::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        Ok(())
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::SquaredExponential { length_scale } => {
                let sq_dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq_dist / (2.0 * length_scale * length_scale)).exp()
            }
            KernelKind::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

/// Symmetric positive semi-definite kernel matrix over an ordered point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: Vec<f64>,
    points: Vec<Vec<f64>>,
    size: usize,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// Build the Gram matrix `K[i][j] = k(points[i], points[j])`.
///
/// Each off-diagonal entry is computed once and mirrored so the result is
/// symmetric by construction.
pub fn gram(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<GramMatrix, KernelError> {
    if points.is_empty() {
        return Err(KernelError::EmptyPoints);
    }
    for p in points {
        spec.check_dim(p)?;
    }
    let n = points.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = spec.eval_unchecked(&points[i], &points[j]);
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    Ok(GramMatrix { entries, points: points.to_vec(), size: n })
}

/// Realized information gain `(1/2) log det(I + K / lambda)` of a point set.
///
/// Computed through the Cholesky factor of `K + lambda I`:
/// `log det(I + K/lambda) = log det(K + lambda I) - n log lambda`.
pub fn empirical_info_gain(
    spec: &KernelSpec,
    points: &[Vec<f64>],
    lambda: f64,
) -> Result<f64, KernelError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(KernelError::InvalidParameter(format!(
            "regularizer must be positive and finite, got {lambda}"
        )));
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let gram = gram(spec, points)?;
    let n = gram.size();
    let mut shifted = gram.entries;
    for i in 0..n {
        shifted[i * n + i] += lambda;
    }
    let chol = LowerTriangular::factor(&shifted, n)
        .ok_or_else(|| KernelError::Numerical("Cholesky of K + lambda I failed".into()))?;
    Ok(0.5 * (chol.log_det() - n as f64 * lambda.ln()))
}
