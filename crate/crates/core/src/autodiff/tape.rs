//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each primitive appends
//! a node whose inputs already exist on the tape, so node order is a valid
//! topological order and [`Tape::backward`] is a single reverse sweep.
//! `backward` borrows the tape immutably: it may be called more than once
//! and every call starts from zero gradients.

use std::sync::Arc;

use rand::Rng;

use super::tensor::{axis_split, Tensor};
use crate::embeddings::distance::DistanceKind;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    ShiftRows(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LogClamped { x: Var, eps: f64 },
    Softmax { x: Var, axis: usize },
    MaskedSoftmax(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Sum(Var),
    ReduceAxis { x: Var, axis: usize, mean: bool },
    Dropout { x: Var, scale: Vec<f64> },
    EmbeddingLookup { table: Var, ids: Vec<usize> },
    SelectRows { keep: Vec<bool>, a: Var, b: Var },
    RowDistance { a: Var, b: Var, kind: DistanceKind },
    PairwiseDistance { a: Var, b: Var, kind: DistanceKind },
    GatherCols { x: Var, ids: Vec<usize> },
}

struct Node {
    value: Arc<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    clamped: usize,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when no path reaches it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn shapes_equal(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &[a.shape(), b.shape()]));
    }
    Ok(())
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| Error::shape(op, &[t.shape()]))
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over `len` entries spaced `inner` apart.
fn softmax_strided(data: &mut [f64], outer: usize, len: usize, inner: usize, mask: Option<&[bool]>) {
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| o * len * inner + j * inner + i;
            let live = |j: usize| mask.map_or(true, |m| m[idx(j)]);
            let max = (0..len)
                .filter(|&j| live(j))
                .map(|j| data[idx(j)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let v = if live(j) { (data[idx(j)] - max).exp() } else { 0.0 };
                data[idx(j)] = v;
                total += v;
            }
            for j in 0..len {
                data[idx(j)] /= total;
            }
        }
    }
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

    /// Number of log inputs clamped by [`Tape::log_clamped`] so far.
    pub fn clamp_count(&self) -> usize {
        self.clamped
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shared_value(&self, var: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[var.0].value)
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(Arc::new(value), requires_grad, op)
    }

    fn push_node(&mut self, value: Arc<Tensor>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_node(Arc::new(value), requires_grad, Op::Leaf)
    }

    /// Records a shared input tensor without copying it.
    pub fn leaf_shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_node(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (dims2("matmul", av)?, dims2("matmul", bv)?);
        if k != k2 {
            return Err(Error::shape("matmul", &[av.shape(), bv.shape()]));
        }
        let out = Tensor::new(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        shapes_equal(op, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())
            .expect("map preserves shape")
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.map(x, |v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    /// `[m,n] + [n]`: adds `bias` to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (_, n) = dims2("add_bias", xv)?;
        if bv.numel() != n || bv.shape().len() != 1 {
            return Err(Error::shape("add_bias", &[xv.shape(), bv.shape()]));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    fn row_broadcast(&self, op: &'static str, x: Var, col: Var) -> Result<(usize, usize)> {
        let (xv, cv) = (self.value(x), self.value(col));
        let (m, n) = dims2(op, xv)?;
        if cv.shape() != [m, 1] {
            return Err(Error::shape(op, &[xv.shape(), cv.shape()]));
        }
        Ok((m, n))
    }

    /// `[m,n] * [m,1]`: multiplies row `i` by `col[i]`.
    pub fn scale_rows(&mut self, x: Var, col: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast("scale_rows", x, col)?;
        let mut out = self.value(x).clone();
        let c = self.value(col).data().to_vec();
        for (row, s) in out.data_mut().chunks_mut(n).zip(c) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(out, Op::ScaleRows(x, col), &[x, col]))
    }

    /// `[m,n] + [m,1]`: adds `col[i]` to every entry of row `i`.
    pub fn shift_rows(&mut self, x: Var, col: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast("shift_rows", x, col)?;
        let mut out = self.value(x).clone();
        let c = self.value(col).data().to_vec();
        for (row, s) in out.data_mut().chunks_mut(n).zip(c) {
            row.iter_mut().for_each(|v| *v += s);
        }
        Ok(self.push(out, Op::ShiftRows(x, col), &[x, col]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    /// `ln(max(x, eps))`; every clamped entry increments [`Tape::clamp_count`].
    pub fn log_clamped(&mut self, x: Var, eps: f64) -> Var {
        let clamped = self.value(x).data().iter().filter(|&&v| v < eps).count();
        if clamped > 0 {
            log::warn!("log input clamped to {eps:e} at {clamped} entries");
        }
        self.clamped += clamped;
        let out = self.map(x, |v| v.max(eps).ln());
        self.push(out, Op::LogClamped { x, eps }, &[x])
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.shape().len() {
            return Err(Error::shape("softmax", &[xv.shape()]));
        }
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let mut out = xv.clone();
        softmax_strided(out.data_mut(), outer, len, inner, None);
        Ok(self.push(out, Op::Softmax { x, axis }, &[x]))
    }

    /// Row-wise softmax of `[m,n]` restricted to entries where `mask` is
    /// true; masked entries are exactly zero. Every row needs one live entry.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = dims2("masked_softmax", xv)?;
        if mask.len() != m * n {
            return Err(Error::shape("masked_softmax", &[xv.shape(), &[mask.len()]]));
        }
        if mask.chunks(n).any(|row| !row.contains(&true)) {
            return Err(Error::contract("masked_softmax: a row has no unmasked entry"));
        }
        let mut out = xv.clone();
        softmax_strided(out.data_mut(), m, n, 1, Some(mask));
        Ok(self.push(out, Op::MaskedSoftmax(x), &[x]))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*inputs.first().ok_or_else(|| Error::contract("concat of nothing"))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &[&first]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &[&first, s]));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", &[shape, &[axis, start, len]]));
        }
        let (outer, full, inner) = axis_split(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            data.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(out, Op::Sum(x), &[x])
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.shape().len() {
            return Err(Error::shape(if mean { "mean" } else { "sum_axis" }, &[xv.shape()]));
        }
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += xv.data()[o * len * inner + j * inner + i];
                }
            }
        }
        if mean {
            data.iter_mut().for_each(|v| *v /= len as f64);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = 1;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::ReduceAxis { x, axis, mean }, &[x]))
    }

    /// Mean along `axis`, keeping it as a size-1 dimension.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    /// Sum along `axis`, keeping it as a size-1 dimension.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales
    /// survivors by `1/(1-p)`. Identity (and no RNG draws) when not training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let scale: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { x, scale }, &[x]))
    }

    /// Gathers rows `ids` of a `[V,D]` table into a `[ids.len(), D]` matrix.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = dims2("embedding_lookup", tv)?;
        if ids.is_empty() {
            return Err(Error::contract("embedding_lookup with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape("embedding_lookup", &[tv.shape(), &[bad]]));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            out,
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Row `i` of the result is row `i` of `a` where `keep[i]`, else of `b`.
    pub fn select_rows(&mut self, keep: &[bool], a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        shapes_equal("select_rows", av, bv)?;
        let (m, n) = dims2("select_rows", av)?;
        if keep.len() != m {
            return Err(Error::shape("select_rows", &[av.shape(), &[keep.len()]]));
        }
        let mut data = Vec::with_capacity(m * n);
        for (i, &k) in keep.iter().enumerate() {
            data.extend_from_slice(if k { av.row(i) } else { bv.row(i) });
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            out,
            Op::SelectRows {
                keep: keep.to_vec(),
                a,
                b,
            },
            &[a, b],
        ))
    }

    /// `[m,k], [m,k] -> [m,1]`: distance between matching rows.
    pub fn row_distance(&mut self, a: Var, b: Var, kind: DistanceKind) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        shapes_equal("row_distance", av, bv)?;
        let (m, _) = dims2("row_distance", av)?;
        let data = av
            .rows()
            .zip(bv.rows())
            .map(|(x, y)| kind.distance(x, y))
            .collect::<Result<Vec<_>>>()?;
        let out = Tensor::new(vec![m, 1], data)?;
        Ok(self.push(out, Op::RowDistance { a, b, kind }, &[a, b]))
    }

    /// `[m,k], [n,k] -> [m,n]`: distance between every pair of rows.
    pub fn pairwise_distance(&mut self, a: Var, b: Var, kind: DistanceKind) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((m, k), (n, k2)) = (dims2("pairwise_distance", av)?, dims2("pairwise_distance", bv)?);
        if k != k2 {
            return Err(Error::shape("pairwise_distance", &[av.shape(), bv.shape()]));
        }
        let mut data = Vec::with_capacity(m * n);
        for x in av.rows() {
            for y in bv.rows() {
                data.push(kind.distance(x, y)?);
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(out, Op::PairwiseDistance { a, b, kind }, &[a, b]))
    }

    /// `[m,n] -> [m,1]`: picks `x[i, ids[i]]` from each row.
    pub fn gather_cols(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = dims2("gather_cols", xv)?;
        if ids.len() != m || ids.iter().any(|&i| i >= n) {
            return Err(Error::shape("gather_cols", &[xv.shape(), &[ids.len()]]));
        }
        let data = ids.iter().enumerate().map(|(i, &j)| xv.data()[i * n + j]).collect();
        let out = Tensor::new(vec![m, 1], data)?;
        Ok(self.push(
            out,
            Op::GatherCols {
                x,
                ids: ids.to_vec(),
            },
            &[x],
        ))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("backward: loss is not on this tape"));
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, contrib: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => g.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn like(&self, var: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.value(var).shape().to_vec(), data).expect("gradient matches input shape")
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &*node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.dims2().unwrap().1;
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let g_row = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let b_row = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let g_row = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av_ip = av.data()[i * k + p];
                            if av_ip == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                *d += av_ip * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, self.like(*b, gd.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let da = gd.iter().zip(bv).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*b) {
                    let db = gd.iter().zip(av).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, self.like(*x, gd.iter().map(|v| v * f).collect()));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*bias) {
                    let n = self.value(*bias).numel();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    self.accumulate(grads, *bias, self.like(*bias, db));
                }
            }
            Op::ScaleRows(x, col) => {
                let n = out.dims2().unwrap().1;
                let c = self.value(*col).data();
                if self.requires_grad(*x) {
                    let dx = gd
                        .chunks(n)
                        .zip(c)
                        .flat_map(|(row, s)| row.iter().map(move |v| v * s))
                        .collect();
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if self.requires_grad(*col) {
                    let xv = self.value(*x).data();
                    let dc = gd
                        .chunks(n)
                        .zip(xv.chunks(n))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *col, self.like(*col, dc));
                }
            }
            Op::ShiftRows(x, col) => {
                let n = out.dims2().unwrap().1;
                self.accumulate(grads, *x, g.clone());
                let dc = gd.chunks(n).map(|row| row.iter().sum()).collect();
                self.accumulate(grads, *col, self.like(*col, dc));
            }
            Op::Tanh(x) => {
                let dx = gd.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::LogClamped { x, eps } => {
                let xv = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, v)| if *v < *eps { 0.0 } else { g / v })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::MaskedSoftmax(x) => {
                let n = out.dims2().unwrap().1;
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for ((d, gr), yr) in dx.chunks_mut(n).zip(gd.chunks(n)).zip(y.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.value(v).shape()[*axis];
                    if self.requires_grad(v) {
                        let mut dv = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            dv.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        self.accumulate(grads, v, self.like(v, dv));
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xv = self.value(*x);
                let (outer, full, inner) = axis_split(xv.shape(), *axis);
                let len = out.shape()[*axis];
                let mut dx = vec![0.0; xv.numel()];
                for o in 0..outer {
                    let base = o * full * inner + start * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0]; n]));
            }
            Op::ReduceAxis { x, axis, mean } => {
                let xv = self.value(*x);
                let (outer, len, inner) = axis_split(xv.shape(), *axis);
                let factor = if *mean { 1.0 / len as f64 } else { 1.0 };
                let mut dx = vec![0.0; xv.numel()];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            dx[o * len * inner + j * inner + i] = gd[o * inner + i] * factor;
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Dropout { x, scale } => {
                let dx = gd.iter().zip(scale).map(|(g, s)| g * s).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::EmbeddingLookup { table, ids } => {
                if self.requires_grad(*table) {
                    let tv = self.value(*table);
                    let d = tv.dims2().unwrap().1;
                    let mut dt = Tensor::zeros(tv.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        for (t, v) in dt.row_mut(id).iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                            *t += v;
                        }
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::SelectRows { keep, a, b } => {
                let n = out.dims2().unwrap().1;
                let split = |take: bool| -> Vec<f64> {
                    gd.chunks(n)
                        .zip(keep)
                        .flat_map(|(row, &k)| row.iter().map(move |&v| if k == take { v } else { 0.0 }))
                        .collect()
                };
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, self.like(*a, split(true)));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, self.like(*b, split(false)));
                }
            }
            Op::RowDistance { a, b, kind } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.dims2().unwrap().1;
                let mut da = vec![0.0; av.numel()];
                let mut db = vec![0.0; bv.numel()];
                for (i, (x, y)) in av.rows().zip(bv.rows()).enumerate() {
                    kind.accumulate_grad(
                        x,
                        y,
                        gd[i],
                        &mut da[i * k..(i + 1) * k],
                        &mut db[i * k..(i + 1) * k],
                    );
                }
                self.accumulate(grads, *a, self.like(*a, da));
                self.accumulate(grads, *b, self.like(*b, db));
            }
            Op::PairwiseDistance { a, b, kind } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (av.dims2().unwrap().1, bv.dims2().unwrap().0);
                let mut da = vec![0.0; av.numel()];
                let mut db = vec![0.0; bv.numel()];
                for (i, x) in av.rows().enumerate() {
                    for (j, y) in bv.rows().enumerate() {
                        let (ga, gb) = (&mut da[i * k..(i + 1) * k], &mut db[j * k..(j + 1) * k]);
                        kind.accumulate_grad(x, y, gd[i * n + j], ga, gb);
                    }
                }
                self.accumulate(grads, *a, self.like(*a, da));
                self.accumulate(grads, *b, self.like(*b, db));
            }
            Op::GatherCols { x, ids } => {
                let xv = self.value(*x);
                let n = xv.dims2().unwrap().1;
                let mut dx = vec![0.0; xv.numel()];
                for (i, &j) in ids.iter().enumerate() {
                    dx[i * n + j] = gd[i];
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
        }
    }
}
