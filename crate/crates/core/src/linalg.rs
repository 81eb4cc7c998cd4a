// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small dense linear algebra: a row-major matrix, a cyclic Jacobi
//! eigensolver for symmetric matrices, the symmetric square root built on it,
//! and power iteration for the top eigenvalue of the sample second-moment
//! matrix.

use crate::error::{Result, ScanError};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
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

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ScanError::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v`.
    pub fn t_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                axpy(vi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|a_ij − a_ji|`; `None` for non-square matrices.
    pub fn asymmetry(&self) -> Option<f64> {
        if self.rows != self.cols {
            return None;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        Some(worst)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Symmetric eigendecomposition `A = V diag(λ) Vᵀ`; eigenvalues ascending,
/// eigenvectors stored as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

const SYMMETRY_TOL: f64 = 1e-10;
const JACOBI_OFF_TOL: f64 = 1e-11;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls
/// below `1e-11` (relative to `max(1, ‖A‖_F)`).
pub fn jacobi_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let asym = a
        .asymmetry()
        .ok_or_else(|| ScanError::Shape("eigendecomposition needs a square matrix".into()))?;
    let scale = a.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    if asym > SYMMETRY_TOL * scale {
        return Err(ScanError::NotSymmetric(asym));
    }
    let n = a.rows();
    let mut m = a.clone();
    // Symmetrise exactly so rotations act on a truly symmetric matrix.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let off_norm = |m: &Matrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };
    let tol = JACOBI_OFF_TOL * scale;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&m) < tol {
            break;
        }
        for pp in 0..n {
            for q in (pp + 1)..n {
                let apq = m[(pp, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = m[(pp, pp)];
                let aqq = m[(q, q)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Update rows/columns pp and q of the symmetric matrix.
                for k in 0..n {
                    let mkp = m[(k, pp)];
                    let mkq = m[(k, q)];
                    m[(k, pp)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(pp, k)];
                    let mqk = m[(q, k)];
                    m[(pp, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(pp, q)] = 0.0;
                m[(q, pp)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, pp)];
                    let vkq = v[(k, q)];
                    v[(k, pp)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

impl SymmetricEigen {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for (k, &w) in fl.iter().enumerate() {
                    s += self.vectors[(i, k)] * w * self.vectors[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

/// Symmetric positive-semidefinite square root; negative eigenvalues (from
/// rounding) are clamped at zero.
pub fn symmetric_sqrt(sigma: &Matrix) -> Result<Matrix> {
    let eig = jacobi_eigen(sigma)?;
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Top eigenvalue of `(1/n) XᵀX` for a row-major `n x p` matrix `x`,
/// without forming the `p x p` product.
///
/// Stops after `max_iter` iterations or once the Rayleigh quotient changes by
/// less than `rel_tol` relative.
pub fn power_iteration_second_moment(
    x: &[f64],
    n: usize,
    p: usize,
    max_iter: usize,
    rel_tol: f64,
) -> f64 {
    assert_eq!(x.len(), n * p);
    // Deterministic start with no structural zeros.
    let mut v: Vec<f64> = (0..p).map(|j| 1.0 + 0.1 * ((j % 7) as f64) / 7.0).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|e| *e /= nv);
    let mut lambda = 0.0;
    let mut xv = vec![0.0; n];
    let mut w = vec![0.0; p];
    for _ in 0..max_iter {
        for (t, out) in xv.iter_mut().enumerate() {
            *out = dot(&x[t * p..(t + 1) * p], &v);
        }
        w.iter_mut().for_each(|e| *e = 0.0);
        for (t, &s) in xv.iter().enumerate() {
            if s != 0.0 {
                axpy(s, &x[t * p..(t + 1) * p], &mut w);
            }
        }
        w.iter_mut().for_each(|e| *e /= n as f64);
        let next = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        let converged = (next - lambda).abs() <= rel_tol * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    // Final Rayleigh quotient at the last iterate.
    for (t, out) in xv.iter_mut().enumerate() {
        *out = dot(&x[t * p..(t + 1) * p], &v);
    }
    lambda.max(dot(&xv, &xv) / n as f64)
}

/// Orthonormalises the columns of `a` in place with twice-iterated modified
/// Gram–Schmidt. Returns `false` if a column collapses (numerically
/// dependent input).
pub fn orthonormalize_columns(a: &mut Matrix) -> bool {
    let (rows, cols) = (a.rows(), a.cols());
    for j in 0..cols {
        let original = (0..rows).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt();
        for _ in 0..2 {
            for k in 0..j {
                let proj: f64 = (0..rows).map(|i| a[(i, k)] * a[(i, j)]).sum();
                for i in 0..rows {
                    a[(i, j)] -= proj * a[(i, k)];
                }
            }
        }
        let nrm = (0..rows).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt();
        if !(nrm > 1e-10 * original.max(f64::MIN_POSITIVE)) {
            return false;
        }
        for i in 0..rows {
            a[(i, j)] /= nrm;
        }
    }
    true
}
