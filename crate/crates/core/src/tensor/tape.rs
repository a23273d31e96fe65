//! Recording tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its result and enough information
//! to push gradients back to its inputs. `backward` walks the nodes in
//! reverse creation order, which is automatically a valid topological order
//! because an op can only consume values that already exist.
//!
//! Gradients of leaves accumulate across calls to [`Tape::backward`]; callers
//! that want fresh gradients must call [`Tape::zero_grad`] (the training loop
//! instead uses one tape per sample and scatters leaf gradients into its
//! parameter store).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    gelu_grad_kernel, gelu_kernel, matmul_kernel, sigmoid_kernel, softmax_rows_kernel,
    transpose_kernel, Tensor,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    Add { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: S },
    Matmul { a: Var, b: Var },
    Transpose { a: Var },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Reshape { a: Var },
    SoftmaxRows { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: S },
    Relu { a: Var },
    Gelu { a: Var },
    Sigmoid { a: Var },
    Tanh { a: Var },
    Sum { a: Var },
    Dropout { a: Var, mask: Vec<S> },
    Embed { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    SqDiffSum { a: Var, b: Var },
}

struct Node<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    grad: Vec<S>,
    op: Op<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<S>, op: Op<S>) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        let grad = vec![S::zero(); data.len()];
        self.nodes.push(Node {
            rows,
            cols,
            data,
            grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an input value. Rank-0/1 tensors are laid out as a single row.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        let (r, c) = (t.rows(), t.cols());
        let data = t.data().to_vec();
        self.push(r, c, data, Op::Leaf)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![S::zero(); rows * cols], Op::Leaf)
    }

    pub fn eye(&mut self, n: usize) -> Var {
        self.leaf(Tensor::eye(n))
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn data(&self, v: Var) -> &[S] {
        &self.nodes[v.0].data
    }

    /// Copy a recorded value out as a tensor.
    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.data.clone())
    }

    /// Accumulated gradient of a value (meaningful after `backward`).
    pub fn grad(&self, v: Var) -> &[S] {
        &self.nodes[v.0].grad
    }

    pub fn grad_tensor(&self, v: Var) -> Tensor<S> {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.grad.clone())
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            for g in &mut n.grad {
                *g = S::zero();
            }
        }
    }

    // -- elementwise and structural ops ------------------------------------

    fn assert_same_shape(&self, op: &'static str, a: Var, b: Var) {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert!(
            ar == br && ac == bc,
            "{op}: shape ({ar},{ac}) vs ({br},{bc})"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape("add", a, b);
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        self.push(r, c, data, Op::Add { a, b })
    }

    /// Add a 1×n row vector to every row of an m×n matrix. This is the only
    /// broadcast the tape performs; anything else must be reshaped explicitly.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        assert!(
            rr == 1 && rc == c,
            "add_row: matrix ({r},{c}) vs row ({rr},{rc})"
        );
        let mut data = self.nodes[a.0].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] + self.nodes[row.0].data[j];
            }
        }
        self.push(r, c, data, Op::AddRow { a, row })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape("mul", a, b);
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        self.push(r, c, data, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let (r, cols) = self.shape(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        self.push(r, cols, data, Op::Scale { a, c })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = matmul_kernel(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        Ok(self.push(m, n, data, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = transpose_kernel(&self.nodes[a.0].data, r, c);
        self.push(c, r, data, Op::Transpose { a })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            assert_eq!(c, cols, "concat_rows: width mismatch");
            rows += r;
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        self.push(
            rows,
            cols,
            data,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, rows, "concat_cols: height mismatch");
                c
            })
            .collect();
        let cols: usize = widths.iter().sum();
        let mut data = vec![S::zero(); rows * cols];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            for i in 0..rows {
                for j in 0..w {
                    data[i * cols + offset + j] = self.nodes[p.0].data[i * w + j];
                }
            }
            offset += w;
        }
        self.push(
            rows,
            cols,
            data,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn slice_rows(&mut self, a: Var, range: std::ops::Range<usize>) -> Var {
        let (r, c) = self.shape(a);
        assert!(range.end <= r, "slice_rows {range:?} out of {r} rows");
        let data = self.nodes[a.0].data[range.start * c..range.end * c].to_vec();
        self.push(
            range.len(),
            c,
            data,
            Op::SliceRows {
                a,
                start: range.start,
            },
        )
    }

    pub fn slice_cols(&mut self, a: Var, range: std::ops::Range<usize>) -> Var {
        let (r, c) = self.shape(a);
        assert!(range.end <= c, "slice_cols {range:?} out of {c} cols");
        let w = range.len();
        let mut data = vec![S::zero(); r * w];
        for i in 0..r {
            for j in 0..w {
                data[i * w + j] = self.nodes[a.0].data[i * c + range.start + j];
            }
        }
        self.push(
            r,
            w,
            data,
            Op::SliceCols {
                a,
                start: range.start,
            },
        )
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape changes element count");
        let data = self.nodes[a.0].data.clone();
        self.push(rows, cols, data, Op::Reshape { a })
    }

    // -- nonlinearities -----------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        self.push(r, c, data, Op::Relu { a })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0].data.iter().map(|&x| gelu_kernel(x)).collect();
        self.push(r, c, data, Op::Gelu { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| sigmoid_kernel(x))
            .collect();
        self.push(r, c, data, Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x.tanh()).collect();
        self.push(r, c, data, Op::Tanh { a })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = softmax_rows_kernel(&self.nodes[a.0].data, r, c);
        self.push(r, c, data, Op::SoftmaxRows { a })
    }

    /// Per-row layer normalization with learnable 1×n gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (r, c) = self.shape(x);
        let (gr, gc) = self.shape(gain);
        let (br, bc) = self.shape(bias);
        assert!(gr == 1 && gc == c, "layer_norm gain must be 1x{c}");
        assert!(br == 1 && bc == c, "layer_norm bias must be 1x{c}");
        let eps = S::of(eps);
        let inv_c = S::one() / S::of(c as f64);
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let mean = row.iter().cloned().sum::<S>() * inv_c;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<S>()
                * inv_c;
            let inv_std = S::one() / (var + eps).sqrt();
            for j in 0..c {
                let xhat = (row[j] - mean) * inv_std;
                data[i * c + j] =
                    xhat * self.nodes[gain.0].data[j] + self.nodes[bias.0].data[j];
            }
        }
        self.push(r, c, data, Op::LayerNorm { x, gain, bias, eps })
    }

    // -- reductions and losses ----------------------------------------------

    /// Sum of all entries, as a 1×1 value.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].data.iter().cloned().sum();
        self.push(1, 1, vec![total], Op::Sum { a })
    }

    /// Inverted dropout: kept entries are scaled by 1/keep, so the expected
    /// value is unchanged and inference needs no rescaling.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
        let (r, c) = self.shape(a);
        let keep = S::of(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..r * c)
            .map(|_| {
                if rng.gen::<f64>() < p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        self.push(r, c, data, Op::Dropout { a, mask })
    }

    /// Gather rows of `table` by index; gradients scatter-add back.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, c) = self.shape(table);
        for &id in ids {
            assert!(id < rows, "embed index {id} out of {rows} rows");
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            data.extend_from_slice(&self.nodes[table.0].data[id * c..(id + 1) * c]);
        }
        self.push(
            ids.len(),
            c,
            data,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Mean over rows of the softmax cross-entropy between per-row logits and
    /// integer targets. Uniform logits over `c` classes give exactly `ln c`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (r, c) = self.shape(logits);
        assert_eq!(r, targets.len(), "cross_entropy: {r} rows vs {} targets", targets.len());
        for &t in targets {
            assert!(t < c, "target class {t} out of {c}");
        }
        let probs = softmax_rows_kernel(&self.nodes[logits.0].data, r, c);
        let mut total = S::zero();
        for (i, &t) in targets.iter().enumerate() {
            total = total - probs[i * c + t].ln();
        }
        let mean = total / S::of(r as f64);
        self.push(
            1,
            1,
            vec![mean],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Sum of squared differences, i.e. the squared L2 distance.
    pub fn sq_diff_sum(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape("sq_diff_sum", a, b);
        let total = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        self.push(1, 1, vec![total], Op::SqDiffSum { a, b })
    }

    // -- composites ----------------------------------------------------------

    /// Fully connected layer: x·W + b with b broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        Ok(self.add_row(y, b))
    }

    /// Mean squared error (sq_diff_sum divided by element count).
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sq_diff_sum(a, b);
        self.scale(s, S::one() / S::of((r * c) as f64))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -S::one());
        self.add(a, nb)
    }

    // -- backward -----------------------------------------------------------

    /// Accumulate d(loss)/d(node) into every node's `grad`.
    ///
    /// The sweep itself uses a scratch buffer so earlier accumulated gradients
    /// cannot leak into the current pass; calling this twice therefore doubles
    /// every gradient exactly.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let (r, c) = self.shape(loss);
        if r * c != 1 {
            return Err(Error::NonScalarLoss(vec![r, c]));
        }
        let mut g: Vec<Vec<S>> = self
            .nodes
            .iter()
            .map(|n| vec![S::zero(); n.data.len()])
            .collect();
        g[loss.0][0] = S::one();

        for idx in (0..self.nodes.len()).rev() {
            if g[idx].iter().all(|&v| v == S::zero()) {
                continue;
            }
            // Take the output gradient out so we can mutate the rest of `g`.
            let gout = std::mem::take(&mut g[idx]);
            let (rows, cols) = (self.nodes[idx].rows, self.nodes[idx].cols);
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    let (a, b) = (a.0, b.0);
                    for (i, &v) in gout.iter().enumerate() {
                        g[a][i] = g[a][i] + v;
                    }
                    for (i, &v) in gout.iter().enumerate() {
                        g[b][i] = g[b][i] + v;
                    }
                }
                Op::AddRow { a, row } => {
                    let (a, row) = (a.0, row.0);
                    for (i, &v) in gout.iter().enumerate() {
                        g[a][i] = g[a][i] + v;
                    }
                    for i in 0..rows {
                        for j in 0..cols {
                            g[row][j] = g[row][j] + gout[i * cols + j];
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    for i in 0..gout.len() {
                        let (av, bv) = (self.nodes[ai].data[i], self.nodes[bi].data[i]);
                        g[ai][i] = g[ai][i] + gout[i] * bv;
                        g[bi][i] = g[bi][i] + gout[i] * av;
                    }
                }
                Op::Scale { a, c: k } => {
                    let (a, k) = (a.0, *k);
                    for (i, &v) in gout.iter().enumerate() {
                        g[a][i] = g[a][i] + v * k;
                    }
                }
                Op::Matmul { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    let m = self.nodes[ai].rows;
                    let k = self.nodes[ai].cols;
                    let n = cols;
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    let bt = transpose_kernel(&self.nodes[bi].data, k, n);
                    let da = matmul_kernel(&gout, &bt, m, n, k);
                    let at = transpose_kernel(&self.nodes[ai].data, m, k);
                    let db = matmul_kernel(&at, &gout, k, m, n);
                    for (i, v) in da.into_iter().enumerate() {
                        g[ai][i] = g[ai][i] + v;
                    }
                    for (i, v) in db.into_iter().enumerate() {
                        g[bi][i] = g[bi][i] + v;
                    }
                }
                Op::Transpose { a } => {
                    let ai = a.0;
                    let da = transpose_kernel(&gout, rows, cols);
                    for (i, v) in da.into_iter().enumerate() {
                        g[ai][i] = g[ai][i] + v;
                    }
                }
                Op::ConcatRows { parts } => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].data.len();
                        for i in 0..len {
                            g[p.0][i] = g[p.0][i] + gout[offset + i];
                        }
                        offset += len;
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[p.0].cols;
                        for i in 0..rows {
                            for j in 0..w {
                                g[p.0][i * w + j] =
                                    g[p.0][i * w + j] + gout[i * cols + offset + j];
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceRows { a, start } => {
                    let (ai, start) = (a.0, *start);
                    for i in 0..rows {
                        for j in 0..cols {
                            let src = (start + i) * cols + j;
                            g[ai][src] = g[ai][src] + gout[i * cols + j];
                        }
                    }
                }
                Op::SliceCols { a, start } => {
                    let (ai, start) = (a.0, *start);
                    let ac = self.nodes[ai].cols;
                    for i in 0..rows {
                        for j in 0..cols {
                            let src = i * ac + start + j;
                            g[ai][src] = g[ai][src] + gout[i * cols + j];
                        }
                    }
                }
                Op::Reshape { a } => {
                    let ai = a.0;
                    for (i, &v) in gout.iter().enumerate() {
                        g[ai][i] = g[ai][i] + v;
                    }
                }
                Op::SoftmaxRows { a } => {
                    let ai = a.0;
                    // dx_i = s_i·(g_i − Σ_j g_j·s_j), row by row.
                    for i in 0..rows {
                        let s = &self.nodes[idx].data[i * cols..(i + 1) * cols];
                        let gr = &gout[i * cols..(i + 1) * cols];
                        let dot: S = s.iter().zip(gr).map(|(&sv, &gv)| sv * gv).sum();
                        for j in 0..cols {
                            g[ai][i * cols + j] = g[ai][i * cols + j] + s[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (xi, gi, bi, eps) = (x.0, gain.0, bias.0, *eps);
                    let inv_c = S::one() / S::of(cols as f64);
                    for i in 0..rows {
                        let row = &self.nodes[xi].data[i * cols..(i + 1) * cols];
                        let mean = row.iter().cloned().sum::<S>() * inv_c;
                        let var = row
                            .iter()
                            .map(|&v| (v - mean) * (v - mean))
                            .sum::<S>()
                            * inv_c;
                        let inv_std = S::one() / (var + eps).sqrt();
                        let gr = &gout[i * cols..(i + 1) * cols];
                        let mut sum_dxhat = S::zero();
                        let mut sum_dxhat_xhat = S::zero();
                        let mut xhat = vec![S::zero(); cols];
                        let mut dxhat = vec![S::zero(); cols];
                        for j in 0..cols {
                            xhat[j] = (row[j] - mean) * inv_std;
                            dxhat[j] = gr[j] * self.nodes[gi].data[j];
                            sum_dxhat = sum_dxhat + dxhat[j];
                            sum_dxhat_xhat = sum_dxhat_xhat + dxhat[j] * xhat[j];
                        }
                        for j in 0..cols {
                            let d = inv_std
                                * inv_c
                                * (S::of(cols as f64) * dxhat[j]
                                    - sum_dxhat
                                    - xhat[j] * sum_dxhat_xhat);
                            g[xi][i * cols + j] = g[xi][i * cols + j] + d;
                            g[gi][j] = g[gi][j] + gr[j] * xhat[j];
                            g[bi][j] = g[bi][j] + gr[j];
                        }
                    }
                }
                Op::Relu { a } => {
                    let ai = a.0;
                    for i in 0..gout.len() {
                        if self.nodes[ai].data[i] > S::zero() {
                            g[ai][i] = g[ai][i] + gout[i];
                        }
                    }
                }
                Op::Gelu { a } => {
                    let ai = a.0;
                    for i in 0..gout.len() {
                        g[ai][i] = g[ai][i] + gout[i] * gelu_grad_kernel(self.nodes[ai].data[i]);
                    }
                }
                Op::Sigmoid { a } => {
                    let ai = a.0;
                    for i in 0..gout.len() {
                        let s = self.nodes[idx].data[i];
                        g[ai][i] = g[ai][i] + gout[i] * s * (S::one() - s);
                    }
                }
                Op::Tanh { a } => {
                    let ai = a.0;
                    for i in 0..gout.len() {
                        let t = self.nodes[idx].data[i];
                        g[ai][i] = g[ai][i] + gout[i] * (S::one() - t * t);
                    }
                }
                Op::Sum { a } => {
                    let ai = a.0;
                    let v = gout[0];
                    for x in g[ai].iter_mut() {
                        *x = *x + v;
                    }
                }
                Op::Dropout { a, mask } => {
                    let ai = a.0;
                    for i in 0..gout.len() {
                        g[ai][i] = g[ai][i] + gout[i] * mask[i];
                    }
                }
                Op::Embed { table, ids } => {
                    let (ti, ids) = (table.0, ids.clone());
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            g[ti][id * cols + j] = g[ti][id * cols + j] + gout[r * cols + j];
                        }
                    }
                }
                Op::CrossEntropy { logits, targets } => {
                    let (li, targets) = (logits.0, targets.clone());
                    let lr = self.nodes[li].rows;
                    let lc = self.nodes[li].cols;
                    let probs = softmax_rows_kernel(&self.nodes[li].data, lr, lc);
                    let scale = gout[0] / S::of(lr as f64);
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..lc {
                            let onehot = if j == t { S::one() } else { S::zero() };
                            g[li][i * lc + j] =
                                g[li][i * lc + j] + scale * (probs[i * lc + j] - onehot);
                        }
                    }
                }
                Op::SqDiffSum { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    let two = S::of(2.0);
                    for i in 0..self.nodes[ai].data.len() {
                        let d = two * (self.nodes[ai].data[i] - self.nodes[bi].data[i]) * gout[0];
                        g[ai][i] = g[ai][i] + d;
                        g[bi][i] = g[bi][i] - d;
                    }
                }
            }
            g[idx] = gout;
        }

        for (node, gi) in self.nodes.iter_mut().zip(g) {
            for (dst, src) in node.grad.iter_mut().zip(gi) {
                *dst = *dst + src;
            }
        }
        Ok(())
    }
}
