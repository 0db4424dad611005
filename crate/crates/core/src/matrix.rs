//! Dense row-major `f64` matrix used throughout training and evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            Validation,
            "matrix of shape {rows}x{cols} needs {} values, got {}",
            rows * cols,
            data.len()
        );
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            ensure!(
                r.len() == cols,
                Validation,
                "row {i} has {} columns, expected {cols}",
                r.len()
            );
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield empty rows explicitly.
        let cols = self.cols;
        (0..self.rows).map(move |i| &self.data[i * cols..(i + 1) * cols])
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Horizontal concatenation; all parts must have the same row count.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        for p in parts {
            ensure!(
                p.rows == rows,
                Validation,
                "cannot concatenate matrices with {} and {rows} rows",
                p.rows
            );
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out[s, o] = bias[o] + <x[s, :], w[o, :]>` for `w` stored as out×in.
pub(crate) fn affine(x: &Matrix, w: &[f64], bias: &[f64]) -> Matrix {
    let (n, d) = x.shape();
    let m = bias.len();
    debug_assert_eq!(w.len(), m * d);
    let mut out = Matrix::zeros(n, m);
    for s in 0..n {
        let xs = x.row(s);
        let os = out.row_mut(s);
        for (o, val) in os.iter_mut().enumerate() {
            *val = bias[o] + dot(xs, &w[o * d..(o + 1) * d]);
        }
    }
    out
}

/// Accumulates `grad_w += deltaᵀ x` and `grad_b += Σ_s delta[s]`.
pub(crate) fn accumulate_affine_grad(
    x: &Matrix,
    delta: &Matrix,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let d = x.cols();
    for s in 0..x.rows() {
        let xs = x.row(s);
        for (o, &g) in delta.row(s).iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad_b[o] += g;
            axpy(g, xs, &mut grad_w[o * d..(o + 1) * d]);
        }
    }
}

/// `delta · w`, the gradient with respect to the affine input.
pub(crate) fn backprop_input(delta: &Matrix, w: &[f64], in_dim: usize) -> Matrix {
    let n = delta.rows();
    let mut out = Matrix::zeros(n, in_dim);
    for s in 0..n {
        let os = out.row_mut(s);
        for (o, &g) in delta.row(s).iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, &w[o * in_dim..(o + 1) * in_dim], os);
        }
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
