//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass as a
//! node holding its output value. Handles to nodes are plain [`Var`]
//! indices; because each node can only refer to nodes created before it,
//! the recorded graph is acyclic by construction. [`Tape::backward`] walks
//! the nodes in reverse creation order and returns the adjoint of every
//! node that depends on a differentiable leaf.
//!
//! Parameters live in a [`ParamStore`] and enter a tape through
//! [`Tape::param`]. A parameter registered twice on the same tape resolves
//! to the same leaf, so shared weights have a single gradient accumulator.
//!
//! Every primitive checks that its output is finite; NaN or infinity is
//! reported as [`Error::NonFinite`] naming the primitive.

mod adamw;
mod check;
pub mod nn;
mod params;

pub use adamw::{AdamW, AdamWConfig};
pub use check::{finite_diff_check, FiniteDiffReport, NOISE_FLOOR};
pub use params::{Init, Param, ParamId, ParamStore};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Shape, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    SumSq(Var),
    Pick(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of the leaf `v`, or `None` when `v` does not influence the
    /// loss. Adjoints of intermediate nodes are released during the sweep.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, with zeros substituted for unreachable nodes.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.rows, shape.cols))
    }
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn classify_broadcast(op: &'static str, a: Shape, b: Shape) -> Result<Broadcast> {
    if a == b {
        Ok(Broadcast::Same)
    } else if b.rows == 1 && b.cols == a.cols {
        Ok(Broadcast::Row)
    } else if b.cols == 1 && b.rows == a.rows {
        Ok(Broadcast::Col)
    } else if b.rows == 1 && b.cols == 1 {
        Ok(Broadcast::Scalar)
    } else {
        Err(Error::Shape { op, lhs: a, rhs: b })
    }
}

#[inline]
fn bidx(kind: Broadcast, cols: usize, r: usize, c: usize) -> usize {
    match kind {
        Broadcast::Same => r * cols + c,
        Broadcast::Row => c,
        Broadcast::Col => r,
        Broadcast::Scalar => 0,
    }
}

fn elementwise(a: &Tensor, b: &Tensor, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (rows, cols) = (a.rows(), a.cols());
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(rows * cols);
    match kind {
        Broadcast::Same => out.extend(ad.iter().zip(bd).map(|(&x, &y)| f(x, y))),
        _ => {
            for r in 0..rows {
                for c in 0..cols {
                    out.push(f(ad[r * cols + c], bd[bidx(kind, cols, r, c)]));
                }
            }
        }
    }
    Tensor::from_vec(rows, cols, out)
}

/// Sum `g` (shaped like the broadcast output) back down to the shape of `b`.
fn reduce_broadcast(g: &Tensor, kind: Broadcast, b_shape: Shape) -> Tensor {
    match kind {
        Broadcast::Same => g.clone(),
        _ => {
            let mut out = Tensor::zeros(b_shape.rows, b_shape.cols);
            let cols = g.cols();
            let od = out.data_mut();
            for r in 0..g.rows() {
                for c in 0..cols {
                    od[bidx(kind, cols, r, c)] += g.get(r, c);
                }
            }
            out
        }
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - m);
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn emit(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &value)?;
        let rg = self.rg(inputs);
        Ok(self.push(value, op, rg))
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        check_finite("constant", &value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    /// A differentiable leaf not backed by a parameter store.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        check_finite("leaf", &value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Register `id` from `store`; repeated registration returns the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.params.insert(id, v);
        v
    }

    /// A copy of `v`'s value that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = self.value(a).matmul(self.value(b));
        self.emit("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a + b`; `b` may be `a`-shaped, a `1 x cols` row, a `rows x 1`
    /// column or a `1 x 1` scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = classify_broadcast("add", self.shape(a), self.shape(b))?;
        let out = elementwise(self.value(a), self.value(b), kind, |x, y| x + y);
        self.emit("add", out, Op::Add(a, b, kind), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = classify_broadcast("sub", self.shape(a), self.shape(b))?;
        let out = elementwise(self.value(a), self.value(b), kind, |x, y| x - y);
        self.emit("sub", out, Op::Sub(a, b, kind), &[a, b])
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = classify_broadcast("mul", self.shape(a), self.shape(b))?;
        let out = elementwise(self.value(a), self.value(b), kind, |x, y| x * y);
        self.emit("mul", out, Op::Mul(a, b, kind), &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * k);
        self.emit("scale", out, Op::Scale(a, k), &[a])
    }

    /// Concatenate along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols", "no inputs"))?;
        let rows = self.shape(first).rows;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.rows != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first),
                    rhs: s,
                });
            }
            cols += s.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.emit("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Stack along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows", "no inputs"))?;
        let cols = self.shape(first).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.cols != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first),
                    rhs: s,
                });
            }
            rows += s.rows;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(rows, cols, data);
        self.emit("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if len == 0 || start + len > s.cols {
            return Err(Error::contract(
                "slice_cols",
                format!("columns {start}..{} out of range for {s}", start + len),
            ));
        }
        let mut out = Tensor::zeros(s.rows, len);
        for r in 0..s.rows {
            out.row_mut(r)
                .copy_from_slice(&self.value(a).row(r)[start..start + len]);
        }
        self.emit("slice_cols", out, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.rows {
            return Err(Error::contract(
                "slice_rows",
                format!("rows {start}..{} out of range for {s}", start + len),
            ));
        }
        let c = s.cols;
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::from_vec(len, c, data);
        self.emit("slice_rows", out, Op::SliceRows(a, start), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.emit("relu", out, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.emit("leaky_relu", out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.emit("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(libm::tanh);
        self.emit("tanh", out, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(libm::exp);
        self.emit("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(libm::log);
        self.emit("log", out, Op::Log(a), &[a])
    }

    /// Softmax over the last axis (each row).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a));
        self.emit("softmax", out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + libm::log(row.iter().map(|&v| libm::exp(v - m)).sum::<f64>());
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.emit("log_softmax", out, Op::LogSoftmax(a), &[a])
    }

    /// Row lookup: output row `k` is row `index[k]` of `table`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if let Some(&bad) = index.iter().find(|&&i| i >= s.rows) {
            return Err(Error::contract(
                "gather_rows",
                format!("index {bad} out of range for {s}"),
            ));
        }
        let mut data = Vec::with_capacity(index.len() * s.cols);
        let t = self.value(table);
        for &i in index {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(index.len(), s.cols, data);
        self.emit("gather_rows", out, Op::Gather(table, index.to_vec()), &[table])
    }

    /// Segment sum: output row `index[k]` accumulates input row `k`.
    pub fn scatter_add_rows(&mut self, src: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let s = self.shape(src);
        if index.len() != s.rows {
            return Err(Error::contract(
                "scatter_add_rows",
                format!("{} indices for {s} input", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(Error::contract(
                "scatter_add_rows",
                format!("target {bad} out of range for {out_rows} rows"),
            ));
        }
        let mut out = Tensor::zeros(out_rows, s.cols);
        let v = self.value(src);
        for (k, &i) in index.iter().enumerate() {
            for (o, x) in out.row_mut(i).iter_mut().zip(v.row(k)) {
                *o += x;
            }
        }
        self.emit("scatter_add_rows", out, Op::ScatterAdd(src, index.to_vec()), &[src])
    }

    /// Softmax of a score column within groups sharing the same segment id.
    pub fn segment_softmax(&mut self, scores: Var, segment: &[usize]) -> Result<Var> {
        let s = self.shape(scores);
        if s.cols != 1 || segment.len() != s.rows {
            return Err(Error::contract(
                "segment_softmax",
                format!("expected a column of {} scores, got {s}", segment.len()),
            ));
        }
        let nseg = segment.iter().copied().max().map_or(0, |m| m + 1);
        let x = self.value(scores).data();
        let mut max = vec![f64::NEG_INFINITY; nseg];
        for (k, &g) in segment.iter().enumerate() {
            max[g] = max[g].max(x[k]);
        }
        let mut e: Vec<f64> = segment
            .iter()
            .enumerate()
            .map(|(k, &g)| libm::exp(x[k] - max[g]))
            .collect();
        let mut sum = vec![0.0; nseg];
        for (k, &g) in segment.iter().enumerate() {
            sum[g] += e[k];
        }
        for (k, &g) in segment.iter().enumerate() {
            e[k] /= sum[g];
        }
        let out = Tensor::from_vec(s.rows, 1, e);
        self.emit(
            "segment_softmax",
            out,
            Op::SegmentSoftmax(scores, segment.to_vec()),
            &[scores],
        )
    }

    /// Inverted dropout. `rng == None` (evaluation) or `rate == 0` is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(a) };
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.shape(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let s = self.shape(a);
        let data = self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::from_vec(s.rows, s.cols, data);
        self.emit("dropout", out, Op::Dropout(a, mask), &[a])
    }

    /// Row-wise layer normalisation with `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x);
        for p in [gamma, beta] {
            let ps = self.shape(p);
            if ps != Shape::new(1, s.cols) {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: s,
                    rhs: ps,
                });
            }
        }
        let c = s.cols as f64;
        let mut xhat = Vec::with_capacity(s.len());
        let mut inv_std = Vec::with_capacity(s.rows);
        let mut out = Tensor::zeros(s.rows, s.cols);
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        for r in 0..s.rows {
            let row = self.value(x).row(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std.push(is);
            let orow = out.row_mut(r);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                orow[j] = h * g[j] + b[j];
            }
        }
        self.emit(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.emit("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.is_empty() {
            return Err(Error::contract("mean", "empty input"));
        }
        let out = Tensor::scalar(self.value(a).sum() / s.len() as f64);
        self.emit("mean", out, Op::Mean(a), &[a])
    }

    /// Squared L2 norm of all entries.
    pub fn sum_sq(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).data().iter().map(|v| v * v).sum());
        self.emit("sum_sq", out, Op::SumSq(a), &[a])
    }

    /// Column of `a[r, index[r]]`.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if index.len() != s.rows {
            return Err(Error::contract(
                "pick",
                format!("{} indices for {s} input", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= s.cols) {
            return Err(Error::contract("pick", format!("column {bad} out of range for {s}")));
        }
        let v = self.value(a);
        let data = index.iter().enumerate().map(|(r, &c)| v.get(r, c)).collect();
        let out = Tensor::from_vec(s.rows, 1, data);
        self.emit("pick", out, Op::Pick(a, index.to_vec()), &[a])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let s = self.shape(loss);
        if s != Shape::new(1, 1) {
            return Err(Error::contract("backward", format!("loss must be scalar, got {s}")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that accumulates parameter gradients into `store`.
    /// Parameters not reached by the loss receive nothing (their accumulator
    /// stays as it was, i.e. zero after a reset).
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate(id, g);
            }
        }
        Ok(grads)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let s = self.shape(v);
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(s.rows, s.cols));
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (va, vb) = (self.value(a), self.value(b));
                self.acc_with(grads, a, |ga| gemm(g, false, vb, true, ga, 1.0));
                self.acc_with(grads, b, |gb| gemm(va, true, g, false, gb, 1.0));
            }
            Op::Add(a, b, kind) => {
                self.acc(grads, *a, g.clone());
                let gb = reduce_broadcast(g, *kind, self.shape(*b));
                self.acc(grads, *b, gb);
            }
            Op::Sub(a, b, kind) => {
                self.acc(grads, *a, g.clone());
                let gb = reduce_broadcast(g, *kind, self.shape(*b)).map(|v| -v);
                self.acc(grads, *b, gb);
            }
            Op::Mul(a, b, kind) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = elementwise(g, vb, *kind, |x, y| x * y);
                    self.acc(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let prod = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect(),
                    );
                    let gb = reduce_broadcast(&prod, *kind, self.shape(*b));
                    self.acc(grads, *b, gb);
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.acc(grads, *a, g.map(|v| v * k));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if self.requires_grad(p) {
                        let mut gp = Tensor::zeros(s.rows, s.cols);
                        for r in 0..s.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + s.cols]);
                        }
                        self.acc(grads, p, gp);
                    }
                    off += s.cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if self.requires_grad(p) {
                        let c = s.cols;
                        let gp = Tensor::from_vec(s.rows, c, g.data()[off * c..(off + s.rows) * c].to_vec());
                        self.acc(grads, p, gp);
                    }
                    off += s.rows;
                }
            }
            Op::SliceCols(a, start) => {
                let start = *start;
                self.acc_with(grads, *a, |ga| {
                    for r in 0..g.rows() {
                        for (o, v) in ga.row_mut(r)[start..start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let start = *start;
                self.acc_with(grads, *a, |ga| {
                    let c = g.cols();
                    for (o, v) in ga.data_mut()[start * c..start * c + g.data().len()]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *o += v;
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let ga = zip_map(g, x, |g, x| if x > 0.0 { g } else { 0.0 });
                self.acc(grads, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let x = self.value(*a);
                let ga = zip_map(g, x, |g, x| if x > 0.0 { g } else { slope * g });
                self.acc(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = zip_map(g, y, |g, y| g * y * (1.0 - y));
                self.acc(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = zip_map(g, y, |g, y| g * (1.0 - y * y));
                self.acc(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = zip_map(g, y, |g, y| g * y);
                self.acc(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = zip_map(g, self.value(*a), |g, x| g / x);
                self.acc(grads, *a, ga);
            }
            Op::Softmax(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gs: f64 = gr.iter().sum();
                    for (j, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = gr[j] - libm::exp(yr[j]) * gs;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Gather(table, index) => {
                self.acc_with(grads, *table, |gt| {
                    for (k, &i) in index.iter().enumerate() {
                        for (o, v) in gt.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::ScatterAdd(src, index) => {
                self.acc_with(grads, *src, |gs| {
                    for (k, &i) in index.iter().enumerate() {
                        for (o, v) in gs.row_mut(k).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SegmentSoftmax(scores, segment) => {
                let nseg = segment.iter().copied().max().map_or(0, |m| m + 1);
                let (yd, gd) = (y.data(), g.data());
                let mut dot = vec![0.0; nseg];
                for (k, &s) in segment.iter().enumerate() {
                    dot[s] += yd[k] * gd[k];
                }
                let data = segment
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| yd[k] * (gd[k] - dot[s]))
                    .collect();
                self.acc(grads, *scores, Tensor::from_vec(y.rows(), 1, data));
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.acc(grads, *a, Tensor::from_vec(g.rows(), g.cols(), data));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = (g.rows(), g.cols());
                let gam = self.value(*gamma).data();
                if self.requires_grad(*x) {
                    let c = cols as f64;
                    let mut gx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..cols {
                            let d = gr[j] * gam[j];
                            s1 += d;
                            s2 += d * xh[j];
                        }
                        let is = inv_std[r];
                        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                            let d = gr[j] * gam[j];
                            *o = is / c * (c * d - s1 - xh[j] * s2);
                        }
                    }
                    self.acc(grads, *x, gx);
                }
                self.acc_with(grads, *gamma, |gg| {
                    let gd = gg.data_mut();
                    for r in 0..rows {
                        for j in 0..cols {
                            gd[j] += g.get(r, j) * xhat[r * cols + j];
                        }
                    }
                });
                self.acc_with(grads, *beta, |gb| {
                    let bd = gb.data_mut();
                    for r in 0..rows {
                        for (j, v) in g.row(r).iter().enumerate() {
                            bd[j] += v;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = self.shape(*a);
                self.acc(grads, *a, Tensor::full(s.rows, s.cols, g.item()));
            }
            Op::Mean(a) => {
                let s = self.shape(*a);
                let v = g.item() / s.len() as f64;
                self.acc(grads, *a, Tensor::full(s.rows, s.cols, v));
            }
            Op::SumSq(a) => {
                let k = 2.0 * g.item();
                let ga = self.value(*a).map(|x| k * x);
                self.acc(grads, *a, ga);
            }
            Op::Pick(a, index) => {
                self.acc_with(grads, *a, |ga| {
                    for (r, &c) in index.iter().enumerate() {
                        let v = ga.get(r, c) + g.get(r, 0);
                        ga.set(r, c, v);
                    }
                });
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}
