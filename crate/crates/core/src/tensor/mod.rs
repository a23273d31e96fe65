//! Dense tensors and the reverse-mode tape built on top of them.

pub mod tape;
pub mod params;
pub mod optim;
pub mod checkpoint;
pub mod check;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A dense row-major tensor of rank 0, 1, or 2.
///
/// Rank-1 tensors behave as a single row and rank-0 as a single element; the
/// tape normalizes everything to (rows, cols) internally.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} wants {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        assert!(shape.len() <= 2, "rank > 2 is not supported");
        Tensor { shape, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(vec![rows, cols], vec![S::zero(); rows * cols])
    }

    pub fn scalar(v: S) -> Self {
        Tensor::new(vec![], vec![v])
    }

    pub fn row(data: Vec<S>) -> Self {
        Tensor::new(vec![1, data.len()], data)
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    /// n×n identity.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    /// Entries drawn i.i.d. uniform on `[lo, hi)`.
    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| S::of(rng.gen_range(lo..hi)))
            .collect();
        Tensor::new(vec![rows, cols], data)
    }

    /// Entries drawn i.i.d. from N(0, 1).
    pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| S::of(StandardNormal.sample(rng)))
            .collect();
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows under the rank ≤ 2 normalization (rank 0 and 1 are one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Convert element type (used to lift stored f32 features into f64 runs).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.to_f64_lossy())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Plain (non-recorded) matrix product, for inference-only paths.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor::new(
            vec![m, n],
            matmul_kernel(&self.data, &other.data, m, k, n),
        ))
    }

    /// Add a row vector to every row (non-recorded).
    pub fn add_row(&self, row: &Tensor<S>) -> Tensor<S> {
        assert_eq!(self.cols(), row.cols(), "add_row width mismatch");
        let mut out = self.clone();
        for r in 0..out.rows() {
            let c = out.cols();
            for j in 0..c {
                out.data[r * c + j] = out.data[r * c + j] + row.data[j];
            }
        }
        out
    }

    /// Mean of all rows as a 1×cols tensor.
    pub fn mean_rows(&self) -> Tensor<S> {
        let (r, c) = (self.rows(), self.cols());
        assert!(r > 0, "mean of zero rows");
        let inv = S::of(1.0 / r as f64);
        let mut out = vec![S::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] = out[j] + self.data[i * c + j];
            }
        }
        for v in &mut out {
            *v = *v * inv;
        }
        Tensor::new(vec![1, c], out)
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().to_f64_lossy())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Raw kernels shared by the tape and the non-recorded tensor methods.
// ---------------------------------------------------------------------------

/// C = A·B with A m×k and B k×n, accumulated in i-k-j order so the inner loop
/// runs over contiguous memory.
pub(crate) fn matmul_kernel<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] = out_row[j] + av * b_row[j];
            }
        }
    }
    out
}

pub(crate) fn transpose_kernel<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Row-wise softmax with the usual max subtraction for stability.
pub(crate) fn softmax_rows_kernel<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for i in 0..rows {
        let row = &a[i * cols..(i + 1) * cols];
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for j in 0..cols {
            let e = (row[j] - max).exp();
            out[i * cols + j] = e;
            sum = sum + e;
        }
        let inv = S::one() / sum;
        for j in 0..cols {
            out[i * cols + j] = out[i * cols + j] * inv;
        }
    }
    out
}

pub(crate) fn sigmoid_kernel<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Tanh-based GELU approximation; the backward pass differentiates the same
/// expression, so forward and gradient stay consistent.
pub(crate) fn gelu_kernel<S: Scalar>(x: S) -> S {
    let c = S::of(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = S::of(0.044715);
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + k * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_kernel<S: Scalar>(x: S) -> S {
    let c = S::of(0.797_884_560_802_865_4);
    let k = S::of(0.044715);
    let half = S::of(0.5);
    let three = S::of(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (S::one() + three * k * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * dinner
}
