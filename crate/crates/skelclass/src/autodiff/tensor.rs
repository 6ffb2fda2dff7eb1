//! Dense row-major 2-D tensor of f64 values.
//!
//! Everything the network touches is a matrix (vectors are 1×n or n×1,
//! scalars 1×1), so the value type is deliberately two-dimensional. The
//! matmul kernels split work over output rows; each output element is a
//! sequential dot product, so results are identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Above this operation size (m·k·n) matmul kernels use the rayon pool.
const PAR_FLOPS: usize = 1 << 21;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: [rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { shape: [rows, cols], data: vec![value; rows * cols] }
    }

    /// Builds a tensor from row-major data. Panics if the length does not
    /// match the shape; callers construct shapes, not users.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length != rows*cols");
        Tensor { shape: [rows, cols], data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: [1, 1], data: vec![v] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transposed(&self) -> Tensor {
        let [r, c] = self.shape;
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Frobenius (flattened L2) norm.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn par_rows<F: Fn(usize, &mut [f64]) + Sync>(out: &mut Tensor, flops: usize, f: F) {
    let cols = out.cols();
    if flops >= PAR_FLOPS {
        out.data
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        for (i, row) in out.data.chunks_mut(cols).enumerate() {
            f(i, row);
        }
    }
}

/// C = A · B with A (m,k), B (k,n).
pub fn mm_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(b.rows(), k);
    let mut out = Tensor::zeros(m, n);
    par_rows(&mut out, m * k * n, |i, row| {
        let arow = a.row(i);
        for (l, &al) in arow.iter().enumerate() {
            if al == 0.0 {
                continue;
            }
            let brow = b.row(l);
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += al * bv;
            }
        }
    });
    out
}

/// C = A · Bᵀ with A (m,k), B (n,k).
pub fn mm_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    debug_assert_eq!(b.cols(), k);
    let mut out = Tensor::zeros(m, n);
    par_rows(&mut out, m * k * n, |i, row| {
        let arow = a.row(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(arow, b.row(j));
        }
    });
    out
}

/// C = Aᵀ · B with A (k,m), B (k,n).
pub fn mm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(b.rows(), k);
    let mut out = Tensor::zeros(m, n);
    if m * k * n >= PAR_FLOPS {
        // Column-strided reads of A; rows of the output are independent.
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| {
                for l in 0..k {
                    let al = a.data[l * m + i];
                    if al == 0.0 {
                        continue;
                    }
                    let brow = b.row(l);
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += al * bv;
                    }
                }
            });
    } else {
        for l in 0..k {
            let arow = a.row(l);
            let brow = b.row(l);
            for (i, &al) in arow.iter().enumerate() {
                if al == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += al * bv;
                }
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
