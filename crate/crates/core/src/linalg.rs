//! Dense square matrices and a cyclic Jacobi eigen-solver for symmetric input.
//!
//! Response sets are small (a handful of samples per step), so a Jacobi sweep
//! is exact enough and cheap. Eigenvalues come back in ascending order with
//! orthonormal eigenvectors stored as matrix columns.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Symmetry tolerance accepted by [`symmetric_eigen`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Off-diagonal Frobenius norm at which Jacobi iteration stops.
pub const OFF_DIAGONAL_TOLERANCE: f64 = 1e-10;
/// Sweep budget before the solver reports non-convergence.
pub const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric: |m[{row}][{col}] - m[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("matrix contains a non-finite entry at [{row}][{col}]")]
    NonFinite { row: usize, col: usize },
}

/// Row-major dense `n × n` matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Matrix { n, data: vec![value; n * n] }
    }

    /// Builds a matrix from rows. Panics if the rows are ragged or not square.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), n, "matrix rows must have length {n}");
            data.extend_from_slice(row);
        }
        Matrix { n, data }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Matrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest absolute entry-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    acc += self[(i, j)] * self[(i, j)];
                }
            }
        }
        acc.sqrt()
    }

    /// Applies the same permutation to rows and columns: `out[i][j] = self[p[i]][p[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Matrix {
        assert_eq!(perm.len(), self.n);
        Matrix::from_fn(self.n, |i, j| self[(perm[i], perm[j])])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.n).map(|i| self.row(i)).collect();
        f.debug_list().entries(rows).finish()
    }
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Matrix,
}

impl Eigensystem {
    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        self.eigenvectors.column(k)
    }

    /// `Q Λ Qᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let q = &self.eigenvectors;
        let n = q.dim();
        Matrix::from_fn(n, |i, j| {
            (0..n).map(|k| q[(i, k)] * self.eigenvalues[k] * q[(j, k)]).sum()
        })
    }
}

/// Diagonalizes a symmetric matrix with cyclic Jacobi rotations.
///
/// Iterates until the off-diagonal Frobenius norm drops below
/// [`OFF_DIAGONAL_TOLERANCE`] (scaled by the matrix norm when that exceeds 1)
/// or [`MAX_SWEEPS`] sweeps have run.
pub fn symmetric_eigen(m: &Matrix) -> Result<Eigensystem, LinalgError> {
    let n = m.dim();
    for i in 0..n {
        for j in 0..n {
            if !m[(i, j)].is_finite() {
                return Err(LinalgError::NonFinite { row: i, col: j });
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > SYMMETRY_TOLERANCE {
                return Err(LinalgError::NotSymmetric { row: i, col: j, gap });
            }
        }
    }

    let mut a = m.clone();
    // Work on the exactly symmetric average.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let tol = OFF_DIAGONAL_TOLERANCE * m.frobenius_norm().max(1.0);

    let mut sweeps = 0;
    loop {
        let off = a.off_diagonal_norm();
        if off < tol {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps, residual: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)]).then(x.cmp(&y)));
    let eigenvalues = order.iter().map(|&k| a[(k, k)]).collect();
    let eigenvectors = Matrix::from_fn(n, |i, k| v[(i, order[k])]);
    Ok(Eigensystem { eigenvalues, eigenvectors })
}

/// One Jacobi rotation zeroing `a[p][q]`, accumulated into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.dim();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    // signum(0) is 1 for +0.0, which is the branch we want.
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
