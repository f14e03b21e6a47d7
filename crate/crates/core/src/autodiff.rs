//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation executed through a [`Tape`] appends a node holding its
//! output value and whatever it needs for the backward pass. Nodes are
//! addressed by [`Var`] handles, which are plain indices and therefore
//! `Copy`. [`Tape::backward`] walks the nodes in exact reverse order and
//! accumulates adjoints; leaves created with `requires_grad` receive the
//! result in their tensor's `grad` slot, adding to anything already there.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::layers::conv::Geometry;
use crate::layers::resample::ResamplePlan;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Work and memory recorded while building a tape. All counts are pure
/// functions of the operations and their shapes, never of tensor contents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TapeStats {
    /// Number of recorded operations, leaves excluded.
    pub ops: u64,
    /// Scalar arithmetic operations executed by the forward pass.
    pub flops: u64,
    /// Bytes allocated for operation outputs and saved intermediates.
    pub bytes_allocated: u64,
    /// High-water mark of bytes held by the tape.
    pub peak_live_bytes: u64,
}

pub(crate) enum Op<S> {
    Leaf,
    Add(Var, Var),
    Scale(Var, S),
    Mul { a: Var, b: Var, broadcast: bool },
    Concat { a: Var, b: Var },
    SelectChannel { x: Var, index: usize },
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    Sigmoid(Var),
    Relu(Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Arc<Geometry>,
    },
    MaxPool { x: Var, argmax: Vec<u32> },
    Resample { x: Var, plan: Arc<ResamplePlan> },
    Dice { pred: Var, target: Vec<S>, eps: S },
    CrossEntropy { pred: Var, target: Vec<S> },
    BinaryCrossEntropy { pred: Var, target: Vec<S> },
}

impl<S> Op<S> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul { a, b, .. } | Op::Concat { a, b } => vec![*a, *b],
            Op::Scale(x, _)
            | Op::SelectChannel { x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Softmax(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::MaxPool { x, .. }
            | Op::Resample { x, .. } => vec![*x],
            Op::Conv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Dice { pred, .. }
            | Op::CrossEntropy { pred, .. }
            | Op::BinaryCrossEntropy { pred, .. } => vec![*pred],
        }
    }

    fn saved_bytes(&self) -> u64 {
        let elem = std::mem::size_of::<S>() as u64;
        match self {
            Op::MaxPool { argmax, .. } => 4 * argmax.len() as u64,
            Op::Dice { target, .. }
            | Op::CrossEntropy { target, .. }
            | Op::BinaryCrossEntropy { target, .. } => elem * target.len() as u64,
            _ => 0,
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    stats: TapeStats,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            stats: TapeStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> TapeStats {
        self.stats
    }

    /// Records a tensor as a leaf. Gradients are collected for it when its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push_node(tensor, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn param(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<S> {
        self.nodes[v.0].value.clone()
    }

    /// Clears every accumulated gradient on the tape.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push_node(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        let bytes = (value.numel() * std::mem::size_of::<S>()) as u64 + op.saved_bytes();
        self.stats.bytes_allocated += bytes;
        // Nothing is released before the tape is dropped.
        self.stats.peak_live_bytes = self.stats.bytes_allocated;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, flops: u64) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.stats.ops += 1;
        self.stats.flops += flops;
        self.push_node(value, op, needs_grad)
    }

    // ---------------------------------------------------------------------
    // Elementwise and structural operations
    // ---------------------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let n = out.numel() as u64;
        Ok(self.push(out, Op::Add(a, b), n))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let out = self.value(x).map(|v| v * c);
        let n = out.numel() as u64;
        self.push(out, Op::Scale(x, c), n)
    }

    /// Elementwise product. `b` may either match `a` exactly or have a
    /// trailing channel dimension of 1, in which case it is broadcast
    /// across the channels of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let broadcast = if ta.shape() == tb.shape() {
            false
        } else if is_channel_broadcast(ta.shape(), tb.shape()) {
            true
        } else {
            return Err(Error::shape(format!(
                "mul: {:?} cannot be combined with {:?}",
                ta.shape(),
                tb.shape()
            )));
        };
        let data = if broadcast {
            let c = ta.channels();
            ta.data()
                .chunks_exact(c)
                .zip(tb.data())
                .flat_map(|(row, &m)| row.iter().map(move |&v| v * m))
                .collect()
        } else {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect()
        };
        let out = Tensor::new(ta.shape(), data)?;
        let n = out.numel() as u64;
        Ok(self.push(out, Op::Mul { a, b, broadcast }, n))
    }

    /// Concatenates along the trailing channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape(format!("concat: {sa:?} vs {sb:?}")));
        }
        let (ca, cb) = (ta.channels(), tb.channels());
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        for p in 0..ta.positions() {
            data.extend_from_slice(&ta.data()[p * ca..(p + 1) * ca]);
            data.extend_from_slice(&tb.data()[p * cb..(p + 1) * cb]);
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Concat { a, b }, 0))
    }

    /// Extracts one channel as a `[.., 1]` tensor.
    pub fn select_channel(&mut self, x: Var, index: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(index, index + 1)?;
        Ok(self.push(out, Op::SelectChannel { x, index }, 0))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let total: f64 = t.data().iter().map(|v| v.as_f64()).sum();
        let n = t.numel() as u64;
        self.push(Tensor::scalar(S::of(total)), Op::Sum(x), n)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let total: f64 = t.data().iter().map(|v| v.as_f64()).sum();
        let n = t.numel();
        self.push(
            Tensor::scalar(S::of(total / n as f64)),
            Op::Mean(x),
            n as u64 + 1,
        )
    }

    /// Softmax across the trailing channel axis at every position.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = t.channels();
        if t.rank() == 0 || c == 0 {
            return Err(Error::shape("softmax needs at least one channel"));
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut z = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        let out = Tensor::new(t.shape(), data)?;
        let n = 4 * out.numel() as u64;
        Ok(self.push(out, Op::Softmax(x), n))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let n = 3 * out.numel() as u64;
        self.push(out, Op::Sigmoid(x), n)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(S::zero()));
        let n = out.numel() as u64;
        self.push(out, Op::Relu(x), n)
    }

    // ---------------------------------------------------------------------
    // Backward
    // ---------------------------------------------------------------------

    /// Backpropagates from a one-element `loss`, adding d(loss)/d(leaf)
    /// into the gradient of every leaf recorded with `requires_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                adj[idx] = Some(g);
                continue;
            }
            for (v, contrib) in self.node_backward(idx, &g) {
                match &mut adj[v.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        for (node, g) in self.nodes.iter_mut().zip(adj) {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                match g {
                    Some(g) => node.value.accumulate_grad(&g),
                    None => node.value.accumulate_grad(&vec![S::zero(); node.value.numel()]),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, idx: usize, g: &[S]) -> Vec<(Var, Vec<S>)> {
        let node = &self.nodes[idx];
        let want = |v: &Var| self.nodes[v.0].needs_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if want(v) {
                        out.push((*v, g.to_vec()));
                    }
                }
            }
            Op::Scale(x, c) => out.push((*x, g.iter().map(|&v| v * *c).collect())),
            Op::Mul { a, b, broadcast } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if !broadcast {
                    if want(a) {
                        out.push((*a, g.iter().zip(tb.data()).map(|(&x, &y)| x * y).collect()));
                    }
                    if want(b) {
                        out.push((*b, g.iter().zip(ta.data()).map(|(&x, &y)| x * y).collect()));
                    }
                } else {
                    let c = ta.channels();
                    if want(a) {
                        let ga = g
                            .chunks_exact(c)
                            .zip(tb.data())
                            .flat_map(|(row, &m)| row.iter().map(move |&v| v * m))
                            .collect();
                        out.push((*a, ga));
                    }
                    if want(b) {
                        let gb = g
                            .chunks_exact(c)
                            .zip(ta.data().chunks_exact(c))
                            .map(|(gr, ar)| gr.iter().zip(ar).map(|(&x, &y)| x * y).sum())
                            .collect();
                        out.push((*b, gb));
                    }
                }
            }
            Op::Concat { a, b } => {
                let (ca, cb) = (self.value(*a).channels(), self.value(*b).channels());
                let mut ga = Vec::with_capacity(self.value(*a).numel());
                let mut gb = Vec::with_capacity(self.value(*b).numel());
                for row in g.chunks_exact(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                if want(a) {
                    out.push((*a, ga));
                }
                if want(b) {
                    out.push((*b, gb));
                }
            }
            Op::SelectChannel { x, index } => {
                let c = self.value(*x).channels();
                let mut gx = vec![S::zero(); self.value(*x).numel()];
                for (row, &gv) in gx.chunks_exact_mut(c).zip(g) {
                    row[*index] = gv;
                }
                out.push((*x, gx));
            }
            Op::Sum(x) => out.push((*x, vec![g[0]; self.value(*x).numel()])),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                out.push((*x, vec![g[0] / S::of(n as f64); n]));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.channels();
                let mut gx = vec![S::zero(); y.len()];
                for ((gr, yr), out_r) in g
                    .chunks_exact(c)
                    .zip(y.chunks_exact(c))
                    .zip(gx.chunks_exact_mut(c))
                {
                    let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gv), &yv) in out_r.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                out.push((*x, gx));
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let gx = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * yv * (S::one() - yv))
                    .collect();
                out.push((*x, gx));
            }
            Op::Relu(x) => {
                let xin = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xin)
                    .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                    .collect();
                out.push((*x, gx));
            }
            Op::Conv { x, w, b, geom } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                if want(x) {
                    out.push((*x, geom.grad_input(g, tw.data())));
                }
                if want(w) {
                    out.push((*w, geom.grad_kernel(tx.data(), g)));
                }
                if let Some(b) = b {
                    if want(b) {
                        out.push((*b, geom.grad_bias(g)));
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![S::zero(); self.value(*x).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src as usize] += gv;
                }
                out.push((*x, gx));
            }
            Op::Resample { x, plan } => out.push((*x, plan.adjoint(g))),
            Op::Dice { pred, target, eps } => {
                let p = self.value(*pred);
                out.push((*pred, crate::losses::dice_grad(p, target, *eps, g[0])));
            }
            Op::CrossEntropy { pred, target } => {
                let p = self.value(*pred);
                out.push((*pred, crate::losses::cross_entropy_grad(p, target, g[0])));
            }
            Op::BinaryCrossEntropy { pred, target } => {
                let p = self.value(*pred);
                out.push((*pred, crate::losses::bce_grad(p, target, g[0])));
            }
        }
        out
    }
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

fn is_channel_broadcast(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && !a.is_empty()
        && b[b.len() - 1] == 1
        && a[..a.len() - 1] == b[..b.len() - 1]
}
