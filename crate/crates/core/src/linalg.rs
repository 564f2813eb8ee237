//! Small dense Cholesky kernel shared by the GP and information-gain code.
//!
//! Matrices here are symmetric positive definite of the form `K + lambda*I`,
//! so a plain lower-triangular Cholesky with incremental row append is all we
//! need. The factor is stored as ragged rows (`rows[i]` has `i + 1` entries),
//! which makes the append a pure `push`.

/// Lower-triangular Cholesky factor stored as ragged rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct LowerTriangular {
    rows: Vec<Vec<f64>>,
}

impl LowerTriangular {
    pub fn new() -> Self {
        Self { rows: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Last row of the factor (off-diagonal entries then the pivot).
    pub fn last_row(&self) -> Option<&[f64]> {
        self.rows.last().map(|r| r.as_slice())
    }

    /// Factor a full symmetric matrix given in row-major order.
    ///
    /// Fails if a pivot is not strictly positive, i.e. the matrix is not
    /// numerically positive definite.
    pub fn factor(matrix: &[f64], n: usize) -> Option<Self> {
        debug_assert_eq!(matrix.len(), n * n);
        let mut out = Self::new();
        for i in 0..n {
            let row: Vec<f64> = (0..=i).map(|j| matrix[i * n + j]).collect();
            out.append(&row[..i], row[i])?;
        }
        Some(out)
    }

    /// Extend the factor by one row.
    ///
    /// `cross` holds the new off-diagonal entries of the extended matrix
    /// (length `dim()`), `diag` its new diagonal entry. Returns the new
    /// diagonal pivot of the factor, or `None` if the pivot is non-positive.
    pub fn append(&mut self, cross: &[f64], diag: f64) -> Option<f64> {
        debug_assert_eq!(cross.len(), self.dim());
        let mut row = self.forward_solve(cross);
        let pivot_sq = diag - row.iter().map(|v| v * v).sum::<f64>();
        if pivot_sq <= 0.0 || !pivot_sq.is_finite() {
            return None;
        }
        let pivot = pivot_sq.sqrt();
        row.push(pivot);
        self.rows.push(row);
        Some(pivot)
    }

    /// Solve `L y = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.dim());
        let mut y = vec![0.0; b.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let partial: f64 = row[..i].iter().zip(&y).map(|(l, v)| l * v).sum();
            y[i] = (b[i] - partial) / row[i];
        }
        y
    }

    /// Solve `L^T x = y`.
    pub fn back_solve(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.dim());
        let n = y.len();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in (i + 1)..n {
                acc -= self.rows[k][i] * x[k];
            }
            x[i] = acc / self.rows[i][i];
        }
        x
    }

    /// Solve `L L^T x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.back_solve(&self.forward_solve(b))
    }

    /// `log det(L L^T) = 2 * sum(log L_ii)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| row[i].ln())
            .sum::<f64>()
    }

    /// Reconstruct entry `(i, j)` of `L L^T` (used by consistency tests).
    #[cfg(test)]
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        let m = i.min(j) + 1;
        (0..m)
            .map(|k| self.rows[i].get(k).copied().unwrap_or(0.0) * self.rows[j].get(k).copied().unwrap_or(0.0))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spd_matrix(n: usize) -> Vec<f64> {
        // A = B B^T + n*I with a fixed pseudo-random B
        let mut b = vec![0.0; n * n];
        let mut s = 0x9e3779b97f4a7c15u64;
        for v in b.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((s >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
        }
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
                a[i * n + j] = dot + if i == j { n as f64 } else { 0.0 };
            }
        }
        a
    }

    #[test]
    fn factor_reconstructs() {
        let n = 8;
        let a = spd_matrix(n);
        let l = LowerTriangular::factor(&a, n).unwrap();
        for i in 0..n {
            for j in 0..=i {
                assert_abs_diff_eq!(l.reconstruct(i, j), a[i * n + j], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn append_matches_full_factor() {
        let n = 10;
        let a = spd_matrix(n);
        let full = LowerTriangular::factor(&a, n).unwrap();
        let mut incremental = LowerTriangular::new();
        for i in 0..n {
            let cross: Vec<f64> = (0..i).map(|j| a[i * n + j]).collect();
            incremental.append(&cross, a[i * n + i]).unwrap();
        }
        for i in 0..n {
            for j in 0..=i {
                assert_abs_diff_eq!(incremental.rows[i][j], full.rows[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn solve_round_trips() {
        let n = 6;
        let a = spd_matrix(n);
        let l = LowerTriangular::factor(&a, n).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64) - 2.5).collect();
        let x = l.solve(&b);
        for i in 0..n {
            let ax: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum();
            assert_abs_diff_eq!(ax, b[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn append_rejects_nonpositive_pivot() {
        let mut l = LowerTriangular::new();
        l.append(&[], 1.0).unwrap();
        // duplicating the row with zero regularization makes the pivot zero
        assert!(l.append(&[1.0], 1.0).is_none());
    }

    #[test]
    fn log_det_matches_direct_2x2() {
        // [[2, 1], [1, 2]] has determinant 3
        let a = vec![2.0, 1.0, 1.0, 2.0];
        let l = LowerTriangular::factor(&a, 2).unwrap();
        assert_abs_diff_eq!(l.log_det(), 3.0f64.ln(), epsilon = 1e-12);
    }
}
