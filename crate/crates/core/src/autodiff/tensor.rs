//! Dense row-major `f64` tensors plus the handful of slice kernels the tape
//! ops share. Shapes are `[n]` for vectors, `[r, c]` for matrices and
//! `[co, ci, w]` for conv kernels; scalars are `[1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {:?} wants {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of a `[r, c]` matrix (row `i` is contiguous).
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }
}

// ---- slice kernels ----------------------------------------------------

/// y += a * x
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// C (m x n) += A (m x k) * B (k x n), all row-major.
pub fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip != 0.0 {
                axpy(crow, aip, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

/// C (m x n) += A (m x k) * B^T where B is (n x k) row-major.
pub fn matmul_tb_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cij) in crow.iter_mut().enumerate() {
            *cij += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// y (m) += W (m x k) * x (k)
pub fn matvec_acc(y: &mut [f64], w: &[f64], x: &[f64], m: usize, k: usize) {
    for i in 0..m {
        y[i] += dot(&w[i * k..(i + 1) * k], x);
    }
}

/// y (c) += x^T (r) * A (r x c)
pub fn vecmat_acc(y: &mut [f64], x: &[f64], a: &[f64], r: usize, c: usize) {
    for i in 0..r {
        if x[i] != 0.0 {
            axpy(y, x[i], &a[i * c..(i + 1) * c]);
        }
    }
}

/// Shared forward kernel for dilated 1-D convolutions, used by both the tape
/// op and eager callers so their outputs agree bit for bit.
/// x: [ci, t], w: [co, ci, width], b: [co]; `anti` mirrors the direction.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    ci: usize,
    t_len: usize,
    co: usize,
    width: usize,
    dilation: usize,
    anti: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; co * t_len];
    for o in 0..co {
        let orow = &mut out[o * t_len..(o + 1) * t_len];
        orow.iter_mut().for_each(|v| *v = b[o]);
        for k in 0..width {
            let off = k * dilation;
            if off >= t_len {
                continue;
            }
            for c in 0..ci {
                let wk = w[(o * ci + c) * width + k];
                if wk == 0.0 {
                    continue;
                }
                let xrow = &x[c * t_len..(c + 1) * t_len];
                if anti {
                    axpy(&mut orow[..t_len - off], wk, &xrow[off..]);
                } else {
                    axpy(&mut orow[off..], wk, &xrow[..t_len - off]);
                }
            }
        }
    }
    out
}
