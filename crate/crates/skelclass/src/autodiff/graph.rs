//! Reverse-mode differentiation over a recorded operation graph.
//!
//! Operations append nodes to a [`Graph`]; node ids are strictly increasing,
//! so the record order is already topological and `backward` is a single
//! reverse sweep that visits each node exactly once. Gradients of shared
//! subexpressions accumulate by summation.
//!
//! Every operation validates shapes up front and scans its result for
//! non-finite values; a NaN/Inf anywhere is an error, not a silent state.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tensor::{dot, mm_nn, mm_nt, mm_tn, Tensor};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Whether stochastic/batch-statistic layers run in training or inference
/// configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    /// y = mul·x + add, elementwise; the shift has no gradient.
    Affine { mul: f64 },
    AddBias,
    ConcatRows { offsets: Vec<usize> },
    ConcatCols { offsets: Vec<usize> },
    SliceRows { start: usize },
    SliceCols { start: usize },
    Transpose,
    PermuteRows { perm: Vec<u32> },
    RowSoftmax,
    /// Scaled dot-product attention over consecutive row blocks.
    /// `weights` rows follow the query rows; each row sums to 1.
    Attention { q_rows: usize, kv_rows: usize, scale: f64, weights: Tensor },
    /// Per-block left multiplication by a fixed matrix (the normalized
    /// adjacency in the GCN); the matrix itself is not differentiated.
    BlockLeftMul { m: Tensor },
    BlockRowsMax { block: usize, argmax: Vec<u32> },
    RowMax { argmax: Vec<u32> },
    BlockRowsMean { block: usize },
    MeanAxis { axis: usize },
    SumAll,
    Log,
    Sigmoid,
    Tanh,
    LeakyRelu { slope: f64 },
    PowScalar { exponent: f64 },
    Clamp { lo: f64, hi: f64 },
    TakePerRow { cols: Vec<u32> },
    BatchNorm {
        train: bool,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    Dropout { mask: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "elementwise_mul",
            Op::Affine { .. } => "affine",
            Op::AddBias => "add_bias",
            Op::ConcatRows { .. } => "concat_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Transpose => "transpose",
            Op::PermuteRows { .. } => "permute_rows",
            Op::RowSoftmax => "row_softmax",
            Op::Attention { .. } => "attention",
            Op::BlockLeftMul { .. } => "block_left_mul",
            Op::BlockRowsMax { .. } => "block_rows_max",
            Op::RowMax { .. } => "row_max",
            Op::BlockRowsMean { .. } => "block_rows_mean",
            Op::MeanAxis { .. } => "mean_over_axis",
            Op::SumAll => "sum_all",
            Op::Log => "log",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::PowScalar { .. } => "pow_scalar",
            Op::Clamp { .. } => "clamp",
            Op::TakePerRow { .. } => "take_per_row",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Dropout { .. } => "dropout",
        }
    }
}

struct Node {
    op: Op,
    parents: Vec<NodeId>,
    value: Tensor,
    needs_grad: bool,
}

/// A recorded computation: nodes in topological (creation) order with
/// parent links. Single-writer; distinct graphs may live on distinct
/// threads.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a differentiable variable (parameters enter the graph here).
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push_unchecked(Op::Leaf, vec![], value, requires_grad)
    }

    /// Inserts a value that never receives gradient (inputs, labels).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Leaf, vec![], value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.idx()].value
    }

    /// Gradient of the last `backward` root w.r.t. this node, if any flowed.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.idx()).and_then(|g| g.as_ref())
    }

    /// Attention weights recorded by an `attention` node.
    pub fn attention_weights(&self, id: NodeId) -> Option<&Tensor> {
        match &self.nodes[id.idx()].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Batch mean/variance computed by a train-mode `batch_norm` node,
    /// for the caller's running-statistics update.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[id.idx()].op {
            Op::BatchNorm { train: true, batch_mean, batch_var, .. } => {
                Some((batch_mean, batch_var))
            }
            _ => None,
        }
    }

    /// Distance of the recorded computation to its nearest
    /// non-differentiable point: leaky-ReLU inputs near zero, max ties,
    /// and values near clamp bounds. Finite-difference checks require a
    /// margin comfortably above the probe step, otherwise the numeric
    /// derivative straddles a kink.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { .. } => {
                    let pv = &self.nodes[node.parents[0].idx()].value;
                    for &v in pv.data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::Clamp { lo, hi } => {
                    let pv = &self.nodes[node.parents[0].idx()].value;
                    for &v in pv.data() {
                        margin = margin.min((v - lo).abs().min((v - hi).abs()));
                    }
                }
                Op::BlockRowsMax { block, .. } if *block > 1 => {
                    let pv = &self.nodes[node.parents[0].idx()].value;
                    let (blocks, cols) = (pv.rows() / block, pv.cols());
                    for b in 0..blocks {
                        for c in 0..cols {
                            let mut best = f64::NEG_INFINITY;
                            let mut second = f64::NEG_INFINITY;
                            for i in 0..*block {
                                let v = pv.get(b * block + i, c);
                                if v > best {
                                    second = best;
                                    best = v;
                                } else if v > second {
                                    second = v;
                                }
                            }
                            if second.is_finite() {
                                margin = margin.min(best - second);
                            }
                        }
                    }
                }
                Op::RowMax { .. } => {
                    let pv = &self.nodes[node.parents[0].idx()].value;
                    for r in 0..pv.rows() {
                        let mut best = f64::NEG_INFINITY;
                        let mut second = f64::NEG_INFINITY;
                        for &v in pv.row(r) {
                            if v > best {
                                second = best;
                                best = v;
                            } else if v > second {
                                second = v;
                            }
                        }
                        if second.is_finite() {
                            margin = margin.min(best - second);
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    fn push_unchecked(
        &mut self,
        op: Op,
        parents: Vec<NodeId>,
        value: Tensor,
        needs_grad: bool,
    ) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, parents, value, needs_grad });
        id
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(GraphError::NonFinite { op: op.name() });
        }
        let needs = parents.iter().any(|p| self.nodes[p.idx()].needs_grad);
        Ok(self.push_unchecked(op, parents, value, needs))
    }

    fn shape_err(op: &'static str, detail: String) -> GraphError {
        GraphError::ShapeMismatch { op, detail }
    }

    // ---- primitives -----------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Self::shape_err(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = mm_nn(va, vb);
        self.push(Op::MatMul, vec![a, b], out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn elementwise_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("elementwise_mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Self::shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data);
        self.push(op, vec![a, b], out)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        self.affine(x, k, 0.0)
    }

    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> Result<NodeId> {
        let out = self.value(x).map(|v| mul * v + add);
        self.push(Op::Affine { mul }, vec![x], out)
    }

    /// Adds a 1×c bias row to every row of x.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(Self::shape_err(
                "add_bias",
                format!("x {:?}, bias {:?}", vx.shape(), vb.shape()),
            ));
        }
        let mut out = vx.clone();
        let b = vb.data().to_vec();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(Op::AddBias, vec![x, bias], out)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(GraphError::Invalid { op: "concat_rows", detail: "no inputs".into() });
        }
        let cols = self.value(parts[0]).cols();
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut data = Vec::new();
        let mut rows = 0;
        offsets.push(0);
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Self::shape_err("concat_rows", format!("{} vs {} cols", v.cols(), cols)));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
            offsets.push(rows);
        }
        let out = Tensor::from_vec(rows, cols, data);
        self.push(Op::ConcatRows { offsets }, parts.to_vec(), out)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(GraphError::Invalid { op: "concat_cols", detail: "no inputs".into() });
        }
        let rows = self.value(parts[0]).rows();
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut total_cols = 0;
        offsets.push(0);
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Self::shape_err("concat_cols", format!("{} vs {} rows", v.rows(), rows)));
            }
            total_cols += v.cols();
            offsets.push(total_cols);
        }
        let mut out = Tensor::zeros(rows, total_cols);
        for (pi, &p) in parts.iter().enumerate() {
            let v = self.value(p);
            let off = offsets[pi];
            for r in 0..rows {
                let src = v.row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
            }
        }
        self.push(Op::ConcatCols { offsets }, parts.to_vec(), out)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start + len > v.rows() {
            return Err(Self::shape_err(
                "slice_rows",
                format!("{}..{} of {} rows", start, start + len, v.rows()),
            ));
        }
        let cols = v.cols();
        let data = v.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(len, cols, data);
        self.push(Op::SliceRows { start }, vec![x], out)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start + len > v.cols() {
            return Err(Self::shape_err(
                "slice_cols",
                format!("{}..{} of {} cols", start, start + len, v.cols()),
            ));
        }
        let mut out = Tensor::zeros(v.rows(), len);
        for r in 0..v.rows() {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..start + len]);
        }
        self.push(Op::SliceCols { start }, vec![x], out)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).transposed();
        self.push(Op::Transpose, vec![x], out)
    }

    /// out[i] = x[perm[i]]; `perm` need not be a bijection (gather).
    pub fn permute_rows(&mut self, x: NodeId, perm: Vec<u32>) -> Result<NodeId> {
        let v = self.value(x);
        let cols = v.cols();
        let mut out = Tensor::zeros(perm.len(), cols);
        for (i, &src) in perm.iter().enumerate() {
            if src as usize >= v.rows() {
                return Err(GraphError::Invalid {
                    op: "permute_rows",
                    detail: format!("index {} out of {} rows", src, v.rows()),
                });
            }
            out.row_mut(i).copy_from_slice(v.row(src as usize));
        }
        self.push(Op::PermuteRows { perm }, vec![x], out)
    }

    pub fn row_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let mut out = v.clone();
        for r in 0..out.rows() {
            stable_softmax_row(out.row_mut(r));
        }
        self.push(Op::RowSoftmax, vec![x], out)
    }

    /// Scaled dot-product attention, applied independently to consecutive
    /// row blocks. q has `n·q_rows` rows, k and v have `n·kv_rows` rows for
    /// the same block count n. Weights (softmax(q·kᵀ/√d_k) per block) are
    /// recorded on the node.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        q_rows: usize,
        kv_rows: usize,
    ) -> Result<NodeId> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        if vq.cols() != vk.cols() {
            return Err(Self::shape_err("attention", format!("d_k {} vs {}", vq.cols(), vk.cols())));
        }
        if vk.rows() != vv.rows() {
            return Err(Self::shape_err(
                "attention",
                format!("k rows {} vs v rows {}", vk.rows(), vv.rows()),
            ));
        }
        if q_rows == 0 || kv_rows == 0 || vq.rows() % q_rows != 0 || vk.rows() % kv_rows != 0 {
            return Err(GraphError::Invalid { op: "attention", detail: "bad block sizes".into() });
        }
        let blocks = vq.rows() / q_rows;
        if vk.rows() / kv_rows != blocks {
            return Err(Self::shape_err(
                "attention",
                format!("{} q blocks vs {} kv blocks", blocks, vk.rows() / kv_rows),
            ));
        }
        let scale = 1.0 / (vq.cols() as f64).sqrt();
        let d_v = vv.cols();
        let mut weights = Tensor::zeros(vq.rows(), kv_rows);
        let mut out = Tensor::zeros(vq.rows(), d_v);
        for b in 0..blocks {
            for i in 0..q_rows {
                let qi = vq.row(b * q_rows + i);
                let wrow = weights.row_mut(b * q_rows + i);
                for j in 0..kv_rows {
                    wrow[j] = dot(qi, vk.row(b * kv_rows + j)) * scale;
                }
                stable_softmax_row(wrow);
            }
            for i in 0..q_rows {
                let r = b * q_rows + i;
                for j in 0..kv_rows {
                    let w = weights.get(r, j);
                    let vrow = vv.row(b * kv_rows + j);
                    let orow = out.row_mut(r);
                    for (o, &x) in orow.iter_mut().zip(vrow) {
                        *o += w * x;
                    }
                }
            }
        }
        self.push(Op::Attention { q_rows, kv_rows, scale, weights }, vec![q, k, v], out)
    }

    /// Multiplies every consecutive block of `m.cols()` rows by the fixed
    /// matrix `m` on the left. `m` carries no gradient.
    pub fn block_left_mul(&mut self, m: &Tensor, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let block = m.cols();
        if block == 0 || v.rows() % block != 0 {
            return Err(Self::shape_err(
                "block_left_mul",
                format!("{} rows not divisible by block {}", v.rows(), block),
            ));
        }
        let blocks = v.rows() / block;
        let out_block = m.rows();
        let cols = v.cols();
        let mut out = Tensor::zeros(blocks * out_block, cols);
        for b in 0..blocks {
            for i in 0..out_block {
                let orow = out.row_mut(b * out_block + i);
                for j in 0..block {
                    let w = m.get(i, j);
                    if w == 0.0 {
                        continue;
                    }
                    for (o, &xv) in orow.iter_mut().zip(v.row(b * block + j)) {
                        *o += w * xv;
                    }
                }
            }
        }
        self.push(Op::BlockLeftMul { m: m.clone() }, vec![x], out)
    }

    /// Column-wise max over each consecutive block of rows. Gradient routes
    /// to the argmax row only; ties break to the lowest index.
    pub fn block_rows_max(&mut self, x: NodeId, block: usize) -> Result<NodeId> {
        let v = self.value(x);
        if block == 0 || v.rows() % block != 0 {
            return Err(Self::shape_err(
                "block_rows_max",
                format!("{} rows not divisible by block {}", v.rows(), block),
            ));
        }
        let blocks = v.rows() / block;
        let cols = v.cols();
        let mut out = Tensor::zeros(blocks, cols);
        let mut argmax = vec![0u32; blocks * cols];
        for b in 0..blocks {
            for c in 0..cols {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0u32;
                for i in 0..block {
                    let val = v.get(b * block + i, c);
                    if val > best {
                        best = val;
                        best_i = i as u32;
                    }
                }
                out.set(b, c, best);
                argmax[b * cols + c] = best_i;
            }
        }
        self.push(Op::BlockRowsMax { block, argmax }, vec![x], out)
    }

    /// Max over one axis of a 2-D tensor, with argmax gradient routing.
    pub fn max_over_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        match axis {
            0 => {
                let rows = self.value(x).rows();
                self.block_rows_max(x, rows)
            }
            1 => {
                let v = self.value(x);
                let (rows, cols) = (v.rows(), v.cols());
                let mut out = Tensor::zeros(rows, 1);
                let mut argmax = vec![0u32; rows];
                for r in 0..rows {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_j = 0u32;
                    for (j, &val) in v.row(r).iter().enumerate() {
                        if val > best {
                            best = val;
                            best_j = j as u32;
                        }
                    }
                    out.set(r, 0, best);
                    argmax[r] = best_j;
                }
                let _ = cols;
                self.push(Op::RowMax { argmax }, vec![x], out)
            }
            _ => Err(GraphError::Invalid { op: "max_over_axis", detail: format!("axis {axis}") }),
        }
    }

    /// Column-wise mean over each consecutive block of rows.
    pub fn block_rows_mean(&mut self, x: NodeId, block: usize) -> Result<NodeId> {
        let v = self.value(x);
        if block == 0 || v.rows() % block != 0 {
            return Err(Self::shape_err(
                "block_rows_mean",
                format!("{} rows not divisible by block {}", v.rows(), block),
            ));
        }
        let blocks = v.rows() / block;
        let cols = v.cols();
        let mut out = Tensor::zeros(blocks, cols);
        for b in 0..blocks {
            for i in 0..block {
                let src = v.row(b * block + i);
                let orow = out.row_mut(b);
                for (o, &xv) in orow.iter_mut().zip(src) {
                    *o += xv;
                }
            }
            for o in out.row_mut(b) {
                *o /= block as f64;
            }
        }
        self.push(Op::BlockRowsMean { block }, vec![x], out)
    }

    pub fn mean_over_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        let out = match axis {
            0 => {
                let mut out = Tensor::zeros(1, cols);
                for r in 0..rows {
                    for (o, &xv) in out.row_mut(0).iter_mut().zip(v.row(r)) {
                        *o += xv;
                    }
                }
                for o in out.data_mut() {
                    *o /= rows as f64;
                }
                out
            }
            1 => {
                let mut out = Tensor::zeros(rows, 1);
                for r in 0..rows {
                    out.set(r, 0, v.row(r).iter().sum::<f64>() / cols as f64);
                }
                out
            }
            _ => {
                return Err(GraphError::Invalid {
                    op: "mean_over_axis",
                    detail: format!("axis {axis}"),
                })
            }
        };
        self.push(Op::MeanAxis { axis }, vec![x], out)
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push(Op::SumAll, vec![x], Tensor::scalar(s))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(f64::ln);
        self.push(Op::Log, vec![x], out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid, vec![x], out)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh, vec![x], out)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu { slope }, vec![x], out)
    }

    pub fn pow_scalar(&mut self, x: NodeId, exponent: f64) -> Result<NodeId> {
        let out = self.value(x).map(|v| v.powf(exponent));
        self.push(Op::PowScalar { exponent }, vec![x], out)
    }

    /// Clamps into [lo, hi]; gradient is zero where clamping engaged.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp { lo, hi }, vec![x], out)
    }

    /// out[i, 0] = x[i, cols[i]] — one entry per row.
    pub fn take_per_row(&mut self, x: NodeId, cols: Vec<u32>) -> Result<NodeId> {
        let v = self.value(x);
        if cols.len() != v.rows() {
            return Err(Self::shape_err(
                "take_per_row",
                format!("{} indices for {} rows", cols.len(), v.rows()),
            ));
        }
        let mut out = Tensor::zeros(v.rows(), 1);
        for (i, &c) in cols.iter().enumerate() {
            if c as usize >= v.cols() {
                return Err(GraphError::Invalid {
                    op: "take_per_row",
                    detail: format!("column {} out of {}", c, v.cols()),
                });
            }
            out.set(i, 0, v.get(i, c as usize));
        }
        self.push(Op::TakePerRow { cols }, vec![x], out)
    }

    /// Batch normalization over rows (each column is one feature).
    ///
    /// Train mode normalizes by the batch statistics (population variance)
    /// and records them for the caller's running-average update; eval mode
    /// normalizes by the provided running statistics. Train mode requires
    /// at least two rows.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: (&Tensor, &Tensor),
        mode: Mode,
        eps: f64,
    ) -> Result<NodeId> {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        let shape_ok = |t: &Tensor| t.rows() == 1 && t.cols() == cols;
        if !shape_ok(self.value(gamma)) || !shape_ok(self.value(beta)) {
            return Err(Self::shape_err("batch_norm", "scale/shift must be 1 x features".into()));
        }
        let train = mode == Mode::Train;
        if train && rows < 2 {
            return Err(GraphError::Invalid {
                op: "batch_norm",
                detail: "train mode requires a batch of at least 2 rows".into(),
            });
        }
        let (mean, var) = if train {
            let mut mean = vec![0.0; cols];
            let mut var = vec![0.0; cols];
            for r in 0..rows {
                for (m, &xv) in mean.iter_mut().zip(v.row(r)) {
                    *m += xv;
                }
            }
            for m in &mut mean {
                *m /= rows as f64;
            }
            for r in 0..rows {
                for c in 0..cols {
                    let d = v.get(r, c) - mean[c];
                    var[c] += d * d;
                }
            }
            for q in &mut var {
                *q /= rows as f64;
            }
            (mean, var)
        } else {
            if !shape_ok(running.0) || !shape_ok(running.1) {
                return Err(Self::shape_err("batch_norm", "running stats must be 1 x features".into()));
            }
            (running.0.data().to_vec(), running.1.data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|&q| 1.0 / (q + eps).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut xhat = vec![0.0; rows * cols];
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let h = (v.get(r, c) - mean[c]) * inv_std[c];
                xhat[r * cols + c] = h;
                out.set(r, c, g[c] * h + b[c]);
            }
        }
        self.push(
            Op::BatchNorm { train, xhat, inv_std, batch_mean: mean, batch_var: var },
            vec![x, gamma, beta],
            out,
        )
    }

    /// Inverted dropout: zeroes each element with probability p in train
    /// mode and scales survivors by 1/(1-p); identity in eval mode or at
    /// p = 0. The mask is drawn from a stream seeded by `seed`.
    pub fn dropout(&mut self, x: NodeId, p: f64, mode: Mode, seed: u64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(GraphError::Invalid { op: "dropout", detail: format!("p = {p}") });
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let v = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<f64> = (0..v.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::from_vec(v.rows(), v.cols(), data);
        self.push(Op::Dropout { mask }, vec![x], out)
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradients accumulate by summation
    /// into every node on a differentiable path; each node is processed
    /// exactly once.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(GraphError::Invalid {
                op: "backward",
                detail: format!("root must be scalar, got {:?}", rv.shape()),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.idx()] = Some(Tensor::scalar(1.0));
        for i in (0..=root.idx()).rev() {
            if !self.nodes[i].needs_grad && !matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let gy = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &gy)?;
            self.grads[i] = Some(gy);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: NodeId, delta: Tensor) {
        let t = target.idx();
        if !self.nodes[t].needs_grad {
            return;
        }
        match &mut self.grads[t] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, gy: &Tensor) -> Result<()> {
        let parents = self.nodes[i].parents.clone();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (parents[0], parents[1]);
                if self.nodes[a.idx()].needs_grad {
                    let da = mm_nt(gy, self.value(b));
                    self.accumulate(a, da);
                }
                if self.nodes[b.idx()].needs_grad {
                    let db = mm_tn(self.value(a), gy);
                    self.accumulate(b, db);
                }
            }
            Op::Add => {
                self.accumulate(parents[0], gy.clone());
                self.accumulate(parents[1], gy.clone());
            }
            Op::Sub => {
                self.accumulate(parents[0], gy.clone());
                self.accumulate(parents[1], gy.map(|v| -v));
            }
            Op::Mul => {
                let (a, b) = (parents[0], parents[1]);
                if self.nodes[a.idx()].needs_grad {
                    let vb = self.value(b);
                    let da = Tensor::from_vec(
                        gy.rows(),
                        gy.cols(),
                        gy.data().iter().zip(vb.data()).map(|(&g, &y)| g * y).collect(),
                    );
                    self.accumulate(a, da);
                }
                if self.nodes[b.idx()].needs_grad {
                    let va = self.value(a);
                    let db = Tensor::from_vec(
                        gy.rows(),
                        gy.cols(),
                        gy.data().iter().zip(va.data()).map(|(&g, &x)| g * x).collect(),
                    );
                    self.accumulate(b, db);
                }
            }
            Op::Affine { mul } => {
                let m = *mul;
                self.accumulate(parents[0], gy.map(|v| m * v));
            }
            Op::AddBias => {
                self.accumulate(parents[0], gy.clone());
                if self.nodes[parents[1].idx()].needs_grad {
                    let mut db = Tensor::zeros(1, gy.cols());
                    for r in 0..gy.rows() {
                        for (o, &g) in db.row_mut(0).iter_mut().zip(gy.row(r)) {
                            *o += g;
                        }
                    }
                    self.accumulate(parents[1], db);
                }
            }
            Op::ConcatRows { offsets } => {
                let offsets = offsets.clone();
                let cols = gy.cols();
                for (pi, &p) in parents.iter().enumerate() {
                    if !self.nodes[p.idx()].needs_grad {
                        continue;
                    }
                    let (s, e) = (offsets[pi], offsets[pi + 1]);
                    let part = Tensor::from_vec(e - s, cols, gy.data()[s * cols..e * cols].to_vec());
                    self.accumulate(p, part);
                }
            }
            Op::ConcatCols { offsets } => {
                let offsets = offsets.clone();
                for (pi, &p) in parents.iter().enumerate() {
                    if !self.nodes[p.idx()].needs_grad {
                        continue;
                    }
                    let (s, e) = (offsets[pi], offsets[pi + 1]);
                    let mut part = Tensor::zeros(gy.rows(), e - s);
                    for r in 0..gy.rows() {
                        part.row_mut(r).copy_from_slice(&gy.row(r)[s..e]);
                    }
                    self.accumulate(p, part);
                }
            }
            Op::SliceRows { start } => {
                let start = *start;
                let parent = parents[0];
                let pv = self.value(parent);
                let mut dx = Tensor::zeros(pv.rows(), pv.cols());
                let cols = pv.cols();
                dx.data_mut()[start * cols..(start + gy.rows()) * cols].copy_from_slice(gy.data());
                self.accumulate(parent, dx);
            }
            Op::SliceCols { start } => {
                let start = *start;
                let parent = parents[0];
                let pv = self.value(parent);
                let mut dx = Tensor::zeros(pv.rows(), pv.cols());
                for r in 0..gy.rows() {
                    dx.row_mut(r)[start..start + gy.cols()].copy_from_slice(gy.row(r));
                }
                self.accumulate(parent, dx);
            }
            Op::Transpose => {
                self.accumulate(parents[0], gy.transposed());
            }
            Op::PermuteRows { perm } => {
                let perm = perm.clone();
                let parent = parents[0];
                let pv = self.value(parent);
                let mut dx = Tensor::zeros(pv.rows(), pv.cols());
                for (i, &src) in perm.iter().enumerate() {
                    let grow = gy.row(i);
                    for (o, &g) in dx.row_mut(src as usize).iter_mut().zip(grow) {
                        *o += g;
                    }
                }
                self.accumulate(parent, dx);
            }
            Op::RowSoftmax => {
                let y = &self.nodes[i].value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    softmax_backward_row(y.row(r), gy.row(r), dx.row_mut(r));
                }
                self.accumulate(parents[0], dx);
            }
            Op::Attention { q_rows, kv_rows, scale, weights } => {
                let (q_rows, kv_rows, scale) = (*q_rows, *kv_rows, *scale);
                let weights = weights.clone();
                let (q, k, v) = (parents[0], parents[1], parents[2]);
                let (vq, vk, vv) = (
                    self.value(q).clone(),
                    self.value(k).clone(),
                    self.value(v).clone(),
                );
                let blocks = vq.rows() / q_rows;
                let d_k = vq.cols();
                let d_v = vv.cols();
                let mut dq = Tensor::zeros(vq.rows(), d_k);
                let mut dk = Tensor::zeros(vk.rows(), d_k);
                let mut dv = Tensor::zeros(vv.rows(), d_v);
                let mut dw_row = vec![0.0; kv_rows];
                let mut ds_row = vec![0.0; kv_rows];
                for b in 0..blocks {
                    for iq in 0..q_rows {
                        let r = b * q_rows + iq;
                        let grow = gy.row(r);
                        let wrow = weights.row(r);
                        // dV += wᵀ · dO ; dW = dO · Vᵀ
                        for j in 0..kv_rows {
                            let vrow = vv.row(b * kv_rows + j);
                            dw_row[j] = dot(grow, vrow);
                            let w = wrow[j];
                            if w != 0.0 {
                                let dvrow = dv.row_mut(b * kv_rows + j);
                                for (o, &g) in dvrow.iter_mut().zip(grow) {
                                    *o += w * g;
                                }
                            }
                        }
                        softmax_backward_row(wrow, &dw_row, &mut ds_row);
                        // dQ += dS·K·scale ; dK += dSᵀ·Q·scale
                        let qrow = vq.row(r).to_vec();
                        let dqrow = dq.row_mut(r);
                        for j in 0..kv_rows {
                            let ds = ds_row[j] * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let krow = vk.row(b * kv_rows + j);
                            for (o, &kv) in dqrow.iter_mut().zip(krow) {
                                *o += ds * kv;
                            }
                            let dkrow = dk.row_mut(b * kv_rows + j);
                            for (o, &qv) in dkrow.iter_mut().zip(&qrow) {
                                *o += ds * qv;
                            }
                        }
                    }
                }
                self.accumulate(q, dq);
                self.accumulate(k, dk);
                self.accumulate(v, dv);
            }
            Op::BlockLeftMul { m } => {
                let m = m.clone();
                let parent = parents[0];
                let pv = self.value(parent);
                let block = m.cols();
                let out_block = m.rows();
                let blocks = pv.rows() / block;
                let cols = pv.cols();
                let mut dx = Tensor::zeros(pv.rows(), cols);
                for b in 0..blocks {
                    for j in 0..block {
                        let drow = dx.row_mut(b * block + j);
                        for i in 0..out_block {
                            let w = m.get(i, j);
                            if w == 0.0 {
                                continue;
                            }
                            let grow = gy.row(b * out_block + i);
                            for (o, &g) in drow.iter_mut().zip(grow) {
                                *o += w * g;
                            }
                        }
                    }
                }
                self.accumulate(parent, dx);
            }
            Op::BlockRowsMax { block, argmax } => {
                let (block, argmax) = (*block, argmax.clone());
                let parent = parents[0];
                let pv = self.value(parent);
                let cols = pv.cols();
                let mut dx = Tensor::zeros(pv.rows(), cols);
                for b in 0..gy.rows() {
                    for c in 0..cols {
                        let src = b * block + argmax[b * cols + c] as usize;
                        *dx.row_mut(src).get_mut(c).unwrap() += gy.get(b, c);
                    }
                }
                self.accumulate(parent, dx);
            }
            Op::RowMax { argmax } => {
                let argmax = argmax.clone();
                let parent = parents[0];
                let pv = self.value(parent);
                let mut dx = Tensor::zeros(pv.rows(), pv.cols());
                for (r, &c) in argmax.iter().enumerate() {
                    dx.set(r, c as usize, gy.get(r, 0));
                }
                self.accumulate(parent, dx);
            }
            Op::BlockRowsMean { block } => {
                let block = *block;
                let parent = parents[0];
                let pv = self.value(parent);
                let cols = pv.cols();
                let inv = 1.0 / block as f64;
                let mut dx = Tensor::zeros(pv.rows(), cols);
                for b in 0..gy.rows() {
                    for i in 0..block {
                        let drow = dx.row_mut(b * block + i);
                        for (o, &g) in drow.iter_mut().zip(gy.row(b)) {
                            *o += g * inv;
                        }
                    }
                }
                self.accumulate(parent, dx);
            }
            Op::MeanAxis { axis } => {
                let axis = *axis;
                let parent = parents[0];
                let pv = self.value(parent);
                let (rows, cols) = (pv.rows(), pv.cols());
                let mut dx = Tensor::zeros(rows, cols);
                if axis == 0 {
                    let inv = 1.0 / rows as f64;
                    for r in 0..rows {
                        for (o, &g) in dx.row_mut(r).iter_mut().zip(gy.row(0)) {
                            *o = g * inv;
                        }
                    }
                } else {
                    let inv = 1.0 / cols as f64;
                    for r in 0..rows {
                        let g = gy.get(r, 0) * inv;
                        for o in dx.row_mut(r) {
                            *o = g;
                        }
                    }
                }
                self.accumulate(parent, dx);
            }
            Op::SumAll => {
                let parent = parents[0];
                let pv = self.value(parent);
                let g = gy.get(0, 0);
                self.accumulate(parent, Tensor::filled(pv.rows(), pv.cols(), g));
            }
            Op::Log => {
                let parent = parents[0];
                let pv = self.value(parent);
                let dx = Tensor::from_vec(
                    pv.rows(),
                    pv.cols(),
                    gy.data().iter().zip(pv.data()).map(|(&g, &x)| g / x).collect(),
                );
                self.accumulate(parent, dx);
            }
            Op::Sigmoid => {
                let y = &self.nodes[i].value;
                let dx = Tensor::from_vec(
                    y.rows(),
                    y.cols(),
                    gy.data().iter().zip(y.data()).map(|(&g, &s)| g * s * (1.0 - s)).collect(),
                );
                self.accumulate(parents[0], dx);
            }
            Op::Tanh => {
                let y = &self.nodes[i].value;
                let dx = Tensor::from_vec(
                    y.rows(),
                    y.cols(),
                    gy.data().iter().zip(y.data()).map(|(&g, &t)| g * (1.0 - t * t)).collect(),
                );
                self.accumulate(parents[0], dx);
            }
            Op::LeakyRelu { slope } => {
                let slope = *slope;
                let parent = parents[0];
                let pv = self.value(parent);
                let dx = Tensor::from_vec(
                    pv.rows(),
                    pv.cols(),
                    gy.data()
                        .iter()
                        .zip(pv.data())
                        .map(|(&g, &x)| if x > 0.0 { g } else { g * slope })
                        .collect(),
                );
                self.accumulate(parent, dx);
            }
            Op::PowScalar { exponent } => {
                let e = *exponent;
                let parent = parents[0];
                let pv = self.value(parent);
                let dx = if e == 0.0 {
                    Tensor::zeros(pv.rows(), pv.cols())
                } else {
                    Tensor::from_vec(
                        pv.rows(),
                        pv.cols(),
                        gy.data()
                            .iter()
                            .zip(pv.data())
                            .map(|(&g, &x)| g * e * x.powf(e - 1.0))
                            .collect(),
                    )
                };
                self.accumulate(parent, dx);
            }
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let parent = parents[0];
                let pv = self.value(parent);
                let dx = Tensor::from_vec(
                    pv.rows(),
                    pv.cols(),
                    gy.data()
                        .iter()
                        .zip(pv.data())
                        .map(|(&g, &x)| if x > lo && x < hi { g } else { 0.0 })
                        .collect(),
                );
                self.accumulate(parent, dx);
            }
            Op::TakePerRow { cols } => {
                let cols = cols.clone();
                let parent = parents[0];
                let pv = self.value(parent);
                let mut dx = Tensor::zeros(pv.rows(), pv.cols());
                for (r, &c) in cols.iter().enumerate() {
                    dx.set(r, c as usize, gy.get(r, 0));
                }
                self.accumulate(parent, dx);
            }
            Op::BatchNorm { train, xhat, inv_std, .. } => {
                let train = *train;
                let xhat = xhat.clone();
                let inv_std = inv_std.clone();
                let (x, gamma, beta) = (parents[0], parents[1], parents[2]);
                let g = self.value(gamma).data().to_vec();
                let (rows, cols) = (gy.rows(), gy.cols());
                if self.nodes[beta.idx()].needs_grad {
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for (o, &gv) in db.row_mut(0).iter_mut().zip(gy.row(r)) {
                            *o += gv;
                        }
                    }
                    self.accumulate(beta, db);
                }
                if self.nodes[gamma.idx()].needs_grad {
                    let mut dg = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dg.data_mut()[c] += gy.get(r, c) * xhat[r * cols + c];
                        }
                    }
                    self.accumulate(gamma, dg);
                }
                if self.nodes[x.idx()].needs_grad {
                    let mut dx = Tensor::zeros(rows, cols);
                    if train {
                        // Standard train-mode backward through batch stats:
                        // dx = γ/σ · (dxhat − mean(dxhat) − xhat·mean(dxhat·xhat))
                        let n = rows as f64;
                        let mut sum_dxh = vec![0.0; cols];
                        let mut sum_dxh_xh = vec![0.0; cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                let dxh = gy.get(r, c) * g[c];
                                sum_dxh[c] += dxh;
                                sum_dxh_xh[c] += dxh * xhat[r * cols + c];
                            }
                        }
                        for r in 0..rows {
                            for c in 0..cols {
                                let dxh = gy.get(r, c) * g[c];
                                let val = inv_std[c]
                                    * (dxh - sum_dxh[c] / n - xhat[r * cols + c] * sum_dxh_xh[c] / n);
                                dx.set(r, c, val);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for c in 0..cols {
                                dx.set(r, c, gy.get(r, c) * g[c] * inv_std[c]);
                            }
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::Dropout { mask } => {
                let mask = mask.clone();
                let dx = Tensor::from_vec(
                    gy.rows(),
                    gy.cols(),
                    gy.data().iter().zip(&mask).map(|(&g, &m)| g * m).collect(),
                );
                self.accumulate(parents[0], dx);
            }
        }
        Ok(())
    }
}

/// In-place numerically stable softmax of one row (max subtraction).
pub fn stable_softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// dS from dW for one softmax row: dS_j = y_j (dW_j − Σ_k dW_k y_k).
fn softmax_backward_row(y: &[f64], dw: &[f64], ds: &mut [f64]) {
    let inner = dot(dw, y);
    for ((o, &yj), &dwj) in ds.iter_mut().zip(y).zip(dw) {
        *o = yj * (dwj - inner);
    }
}
