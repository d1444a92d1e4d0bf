//! Reverse-mode differentiation over a tape of dense matrices.
//!
//! Nodes are appended in creation order, so the tape itself is a valid
//! topological order. `backward` walks it once in reverse.

use super::params::ParamSet;
use super::tensor::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis selector. `Rows` runs along axis 0 (down a column), `Cols` along axis 1 (across a row).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Operation that produced a node, together with its static attributes.
#[derive(Clone, Debug)]
pub enum Primitive {
    Leaf,
    Constant,
    MatMul,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Abs,
    Clamp { lo: f64, hi: f64 },
    /// Softmax along `axis`; entries where `mask` is zero get probability exactly zero.
    MaskedSoftmax { axis: Axis, mask: Tensor },
    Sum(Axis),
    Mean(Axis),
    Min2,
    StopGradient,
    Concat(Axis),
    Slice { axis: Axis, start: usize, end: usize },
    Reshape { rows: usize, cols: usize },
    /// `1 x c` to `rows x c`.
    BroadcastRows(usize),
    /// `r x 1` to `r x cols`.
    BroadcastCols(usize),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Leaf => "leaf",
            Primitive::Constant => "constant",
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Neg => "neg",
            Primitive::Scale(_) => "scale",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Abs => "abs",
            Primitive::Clamp { .. } => "clamp",
            Primitive::MaskedSoftmax { .. } => "masked_softmax",
            Primitive::Sum(_) => "sum",
            Primitive::Mean(_) => "mean",
            Primitive::Min2 => "min2",
            Primitive::StopGradient => "stop_gradient",
            Primitive::Concat(_) => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Reshape { .. } => "reshape",
            Primitive::BroadcastRows(_) => "broadcast_rows",
            Primitive::BroadcastCols(_) => "broadcast_cols",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiffNode {
    pub value: Tensor,
    grad: Option<Tensor>,
    pub primitive: Primitive,
    pub parents: Vec<NodeId>,
    pub requires_grad: bool,
}

impl DiffNode {
    /// Accumulated gradient; zeros when nothing reached this node.
    pub fn grad(&self) -> Tensor {
        self.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value.rows(), self.value.cols()))
    }
}

/// Node ids for every entry of a [`ParamSet`], in the set's entry order.
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn id(&self, index: usize) -> NodeId {
        self.ids[index]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<DiffNode>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &DiffNode {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Tensor {
        self.nodes[id.0].grad()
    }

    fn push(&mut self, value: Tensor, primitive: Primitive, parents: Vec<NodeId>, requires_grad: bool) -> NodeId {
        self.nodes.push(DiffNode {
            value,
            grad: None,
            primitive,
            parents,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Primitive::Leaf, Vec::new(), true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Primitive::Constant, Vec::new(), false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    /// Binds every entry of `params` as a differentiable leaf.
    pub fn bind(&mut self, params: &ParamSet) -> Bound {
        Bound {
            ids: params.values().map(|v| self.leaf(v.clone())).collect(),
        }
    }

    /// Binds every entry of `params` as a constant (no gradient flows to it).
    pub fn bind_frozen(&mut self, params: &ParamSet) -> Bound {
        Bound {
            ids: params.values().map(|v| self.constant(v.clone())).collect(),
        }
    }

    /// Applies `primitive` to `inputs`, recording the result on the tape.
    pub fn apply(&mut self, primitive: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            forward(&primitive, &vals)?
        };
        let requires_grad = match primitive {
            Primitive::StopGradient | Primitive::Constant => false,
            Primitive::Leaf => true,
            _ => inputs.iter().any(|id| self.nodes[id.0].requires_grad),
        };
        Ok(self.push(value, primitive, inputs.to_vec(), requires_grad))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Neg, &[a])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Primitive::Scale(c), &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Relu, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Abs, &[a])
    }
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.apply(Primitive::Clamp { lo, hi }, &[a])
    }
    pub fn masked_softmax(&mut self, a: NodeId, axis: Axis, mask: Tensor) -> Result<NodeId> {
        self.apply(Primitive::MaskedSoftmax { axis, mask }, &[a])
    }
    pub fn sum(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        self.apply(Primitive::Sum(axis), &[a])
    }
    pub fn mean(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        self.apply(Primitive::Mean(axis), &[a])
    }
    /// Sum of every entry as a `1 x 1` node.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.sum(a, Axis::Cols)?;
        self.sum(s, Axis::Rows)
    }
    pub fn min2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Min2, &[a, b])
    }
    pub fn stop_gradient(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::StopGradient, &[a])
    }
    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId> {
        self.apply(Primitive::Concat(axis), parts)
    }
    pub fn slice(&mut self, a: NodeId, axis: Axis, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Primitive::Slice { axis, start, end }, &[a])
    }
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        self.apply(Primitive::Reshape { rows, cols }, &[a])
    }
    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        self.apply(Primitive::BroadcastRows(rows), &[a])
    }
    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        self.apply(Primitive::BroadcastCols(cols), &[a])
    }

    /// `x * w + b` with `b` a `1 x out` row broadcast over the rows of `x`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        let rows = self.value(xw).rows();
        let bb = self.broadcast_rows(b, rows)?;
        self.add(xw, bb)
    }

    /// Accumulates d(root)/d(node) into every node that requires a gradient.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let (r, c) = self.nodes[root.0].value.shape();
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarRoot { rows: r, cols: c });
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.accumulate(root, |g| g.data_mut()[0] += 1.0);
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad || self.nodes[idx].parents.is_empty() {
                continue;
            }
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &upstream);
            self.nodes[idx].grad = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, f: impl FnOnce(&mut Tensor)) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let (r, c) = node.value.shape();
        let g = node.grad.get_or_insert_with(|| Tensor::zeros(r, c));
        f(g);
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&mut self, idx: usize, g: &Tensor) {
        let primitive = self.nodes[idx].primitive.clone();
        let parents = self.nodes[idx].parents.clone();
        match primitive {
            Primitive::Leaf | Primitive::Constant | Primitive::StopGradient => {}
            Primitive::MatMul => {
                let (a, b) = (parents[0], parents[1]);
                if self.wants(a) {
                    let bv = self.nodes[b.0].value.clone();
                    self.accumulate(a, |ga| gemm(g, false, &bv, true, ga, 1.0));
                }
                if self.wants(b) {
                    let av = self.nodes[a.0].value.clone();
                    self.accumulate(b, |gb| gemm(&av, true, g, false, gb, 1.0));
                }
            }
            Primitive::Add => {
                self.accumulate(parents[0], |ga| ga.add_assign(g));
                self.accumulate(parents[1], |gb| gb.add_assign(g));
            }
            Primitive::Sub => {
                self.accumulate(parents[0], |ga| ga.add_assign(g));
                self.accumulate(parents[1], |gb| axpy(gb, -1.0, g));
            }
            Primitive::Mul => {
                let (a, b) = (parents[0], parents[1]);
                if self.wants(a) {
                    let contrib = g.zip_map(&self.nodes[b.0].value, |u, v| u * v);
                    self.accumulate(a, |ga| ga.add_assign(&contrib));
                }
                if self.wants(b) {
                    let contrib = g.zip_map(&self.nodes[a.0].value, |u, v| u * v);
                    self.accumulate(b, |gb| gb.add_assign(&contrib));
                }
            }
            Primitive::Neg => self.accumulate(parents[0], |ga| axpy(ga, -1.0, g)),
            Primitive::Scale(c) => self.accumulate(parents[0], |ga| axpy(ga, c, g)),
            Primitive::Relu => self.unary_grad(parents[0], idx, g, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
            Primitive::Tanh => self.unary_grad(parents[0], idx, g, |_, y| 1.0 - y * y),
            Primitive::Sigmoid => self.unary_grad(parents[0], idx, g, |_, y| y * (1.0 - y)),
            Primitive::Exp => self.unary_grad(parents[0], idx, g, |_, y| y),
            Primitive::Log => self.unary_grad(parents[0], idx, g, |x, _| 1.0 / x),
            Primitive::Abs => self.unary_grad(parents[0], idx, g, |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Primitive::Clamp { lo, hi } => {
                self.unary_grad(parents[0], idx, g, |x, _| if x > lo && x < hi { 1.0 } else { 0.0 })
            }
            Primitive::MaskedSoftmax { axis, .. } => {
                let p = &self.nodes[idx].value;
                let mut dx = Tensor::zeros(p.rows(), p.cols());
                for_each_lane(p.rows(), p.cols(), axis, |lane| {
                    let dot: f64 = lane.iter().map(|&k| p.data()[k] * g.data()[k]).sum();
                    for &k in lane {
                        dx.data_mut()[k] = p.data()[k] * (g.data()[k] - dot);
                    }
                });
                self.accumulate(parents[0], |ga| ga.add_assign(&dx));
            }
            Primitive::Sum(axis) | Primitive::Mean(axis) => {
                let (r, c) = self.nodes[parents[0].0].value.shape();
                let scale = match (&primitive, axis) {
                    (Primitive::Mean(_), Axis::Rows) => 1.0 / r as f64,
                    (Primitive::Mean(_), Axis::Cols) => 1.0 / c as f64,
                    _ => 1.0,
                };
                self.accumulate(parents[0], |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            let up = match axis {
                                Axis::Rows => g.data()[j],
                                Axis::Cols => g.data()[i],
                            };
                            ga.data_mut()[i * c + j] += scale * up;
                        }
                    }
                });
            }
            Primitive::Min2 => {
                let (a, b) = (parents[0], parents[1]);
                let av = self.nodes[a.0].value.clone();
                let bv = &self.nodes[b.0].value;
                let first: Vec<bool> = av.data().iter().zip(bv.data()).map(|(x, y)| x <= y).collect();
                self.accumulate(a, |ga| {
                    for (k, v) in ga.data_mut().iter_mut().enumerate() {
                        if first[k] {
                            *v += g.data()[k];
                        }
                    }
                });
                self.accumulate(b, |gb| {
                    for (k, v) in gb.data_mut().iter_mut().enumerate() {
                        if !first[k] {
                            *v += g.data()[k];
                        }
                    }
                });
            }
            Primitive::Concat(axis) => {
                let mut offset = 0;
                for p in parents {
                    let (r, c) = self.nodes[p.0].value.shape();
                    let gc = g.cols();
                    self.accumulate(p, |gp| match axis {
                        Axis::Rows => {
                            let src = &g.data()[offset * gc..(offset + r) * gc];
                            for (d, s) in gp.data_mut().iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        Axis::Cols => {
                            for i in 0..r {
                                for j in 0..c {
                                    gp.data_mut()[i * c + j] += g.data()[i * gc + offset + j];
                                }
                            }
                        }
                    });
                    offset += match axis {
                        Axis::Rows => r,
                        Axis::Cols => c,
                    };
                }
            }
            Primitive::Slice { axis, start, .. } => {
                let (_, pc) = self.nodes[parents[0].0].value.shape();
                self.accumulate(parents[0], |gp| {
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            let (pi, pj) = match axis {
                                Axis::Rows => (i + start, j),
                                Axis::Cols => (i, j + start),
                            };
                            gp.data_mut()[pi * pc + pj] += g.get(i, j);
                        }
                    }
                });
            }
            Primitive::Reshape { .. } => {
                self.accumulate(parents[0], |gp| {
                    for (d, s) in gp.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
            }
            Primitive::BroadcastRows(_) => {
                self.accumulate(parents[0], |gp| {
                    let c = gp.cols();
                    for i in 0..g.rows() {
                        for j in 0..c {
                            gp.data_mut()[j] += g.get(i, j);
                        }
                    }
                });
            }
            Primitive::BroadcastCols(_) => {
                self.accumulate(parents[0], |gp| {
                    for i in 0..g.rows() {
                        gp.data_mut()[i] += g.row(i).iter().sum::<f64>();
                    }
                });
            }
        }
    }

    fn unary_grad(&mut self, parent: NodeId, idx: usize, g: &Tensor, dfdx: impl Fn(f64, f64) -> f64) {
        if !self.wants(parent) {
            return;
        }
        let x = &self.nodes[parent.0].value;
        let y = &self.nodes[idx].value;
        let contrib = Tensor::from_vec(
            x.rows(),
            x.cols(),
            x.data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&x, &y), &u)| u * dfdx(x, y))
                .collect(),
        );
        self.accumulate(parent, |gp| gp.add_assign(&contrib));
    }
}

fn axpy(dst: &mut Tensor, alpha: f64, src: &Tensor) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += alpha * s;
    }
}

/// Calls `f` with the flat indices of each lane along `axis`.
fn for_each_lane(rows: usize, cols: usize, axis: Axis, mut f: impl FnMut(&[usize])) {
    let mut lane = Vec::new();
    match axis {
        Axis::Cols => {
            for i in 0..rows {
                lane.clear();
                lane.extend((0..cols).map(|j| i * cols + j));
                f(&lane);
            }
        }
        Axis::Rows => {
            for j in 0..cols {
                lane.clear();
                lane.extend((0..rows).map(|i| i * cols + j));
                f(&lane);
            }
        }
    }
}

fn expect_arity(op: &'static str, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return shape_err(op, format!("expected {n} inputs, got {}", inputs.len()));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn forward(primitive: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let op = primitive.name();
    match primitive {
        Primitive::Leaf | Primitive::Constant => shape_err(op, "leaves are created with `leaf`/`constant`"),
        Primitive::MatMul => {
            expect_arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.cols() != b.rows() {
                return shape_err(op, format!("{:?} x {:?}", a.shape(), b.shape()));
            }
            let mut out = Tensor::zeros(a.rows(), b.cols());
            gemm(a, false, b, false, &mut out, 0.0);
            Ok(out)
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Min2 => {
            expect_arity(op, inputs, 2)?;
            same_shape(op, inputs[0], inputs[1])?;
            let f: fn(f64, f64) -> f64 = match primitive {
                Primitive::Add => |a, b| a + b,
                Primitive::Sub => |a, b| a - b,
                Primitive::Mul => |a, b| a * b,
                _ => |a, b| if a <= b { a } else { b },
            };
            Ok(inputs[0].zip_map(inputs[1], f))
        }
        Primitive::Neg => unary(op, inputs, |x| -x),
        Primitive::Scale(c) => {
            let c = *c;
            unary(op, inputs, move |x| c * x)
        }
        Primitive::Relu => unary(op, inputs, |x| x.max(0.0)),
        Primitive::Tanh => unary(op, inputs, f64::tanh),
        Primitive::Sigmoid => unary(op, inputs, |x| 1.0 / (1.0 + (-x).exp())),
        Primitive::Exp => unary(op, inputs, f64::exp),
        Primitive::Log => {
            expect_arity(op, inputs, 1)?;
            if let Some((index, &value)) = inputs[0].data().iter().enumerate().find(|(_, &v)| v <= 0.0) {
                return Err(Error::LogDomain { value, index });
            }
            Ok(inputs[0].map(f64::ln))
        }
        Primitive::Abs => unary(op, inputs, f64::abs),
        Primitive::Clamp { lo, hi } => {
            if lo > hi {
                return shape_err(op, format!("empty interval [{lo}, {hi}]"));
            }
            let (lo, hi) = (*lo, *hi);
            unary(op, inputs, move |x| x.max(lo).min(hi))
        }
        Primitive::MaskedSoftmax { axis, mask } => {
            expect_arity(op, inputs, 1)?;
            let x = inputs[0];
            same_shape(op, x, mask)?;
            let mut out = Tensor::zeros(x.rows(), x.cols());
            let mut failed = None;
            let mut lane_no = 0;
            for_each_lane(x.rows(), x.cols(), *axis, |lane| {
                let max = lane
                    .iter()
                    .filter(|&&k| mask.data()[k] != 0.0)
                    .map(|&k| x.data()[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY && failed.is_none() {
                    failed = Some(lane_no);
                }
                let mut z = 0.0;
                for &k in lane {
                    if mask.data()[k] != 0.0 {
                        let e = (x.data()[k] - max).exp();
                        out.data_mut()[k] = e;
                        z += e;
                    }
                }
                for &k in lane {
                    out.data_mut()[k] /= z;
                }
                lane_no += 1;
            });
            match failed {
                Some(row) => Err(Error::AllMasked { row }),
                None => Ok(out),
            }
        }
        Primitive::Sum(axis) | Primitive::Mean(axis) => {
            expect_arity(op, inputs, 1)?;
            let x = inputs[0];
            let (r, c) = x.shape();
            let mean = matches!(primitive, Primitive::Mean(_));
            Ok(match axis {
                Axis::Rows => {
                    let mut out = vec![0.0; c];
                    for i in 0..r {
                        for (o, v) in out.iter_mut().zip(x.row(i)) {
                            *o += v;
                        }
                    }
                    if mean {
                        out.iter_mut().for_each(|v| *v /= r as f64);
                    }
                    Tensor::from_vec(1, c, out)
                }
                Axis::Cols => {
                    let out = (0..r)
                        .map(|i| {
                            let s: f64 = x.row(i).iter().sum();
                            if mean {
                                s / c as f64
                            } else {
                                s
                            }
                        })
                        .collect();
                    Tensor::from_vec(r, 1, out)
                }
            })
        }
        Primitive::StopGradient => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].clone())
        }
        Primitive::Concat(axis) => {
            if inputs.is_empty() {
                return shape_err(op, "nothing to concatenate");
            }
            match axis {
                Axis::Rows => {
                    let c = inputs[0].cols();
                    if let Some(bad) = inputs.iter().find(|t| t.cols() != c) {
                        return shape_err(op, format!("column count {} vs {}", bad.cols(), c));
                    }
                    let rows = inputs.iter().map(|t| t.rows()).sum();
                    let mut data = Vec::with_capacity(rows * c);
                    for t in inputs {
                        data.extend_from_slice(t.data());
                    }
                    Ok(Tensor::from_vec(rows, c, data))
                }
                Axis::Cols => {
                    let r = inputs[0].rows();
                    if let Some(bad) = inputs.iter().find(|t| t.rows() != r) {
                        return shape_err(op, format!("row count {} vs {}", bad.rows(), r));
                    }
                    let cols = inputs.iter().map(|t| t.cols()).sum();
                    let mut data = Vec::with_capacity(r * cols);
                    for i in 0..r {
                        for t in inputs {
                            data.extend_from_slice(t.row(i));
                        }
                    }
                    Ok(Tensor::from_vec(r, cols, data))
                }
            }
        }
        Primitive::Slice { axis, start, end } => {
            expect_arity(op, inputs, 1)?;
            let x = inputs[0];
            let (start, end) = (*start, *end);
            let extent = match axis {
                Axis::Rows => x.rows(),
                Axis::Cols => x.cols(),
            };
            if start > end || end > extent {
                return shape_err(op, format!("range {start}..{end} outside extent {extent}"));
            }
            Ok(match axis {
                Axis::Rows => Tensor::from_vec(
                    end - start,
                    x.cols(),
                    x.data()[start * x.cols()..end * x.cols()].to_vec(),
                ),
                Axis::Cols => {
                    let mut data = Vec::with_capacity(x.rows() * (end - start));
                    for i in 0..x.rows() {
                        data.extend_from_slice(&x.row(i)[start..end]);
                    }
                    Tensor::from_vec(x.rows(), end - start, data)
                }
            })
        }
        Primitive::Reshape { rows, cols } => {
            expect_arity(op, inputs, 1)?;
            if rows * cols != inputs[0].len() {
                return shape_err(op, format!("{:?} into {}x{}", inputs[0].shape(), rows, cols));
            }
            Ok(inputs[0].clone().reshaped(*rows, *cols))
        }
        Primitive::BroadcastRows(rows) => {
            expect_arity(op, inputs, 1)?;
            let x = inputs[0];
            if x.rows() != 1 {
                return shape_err(op, format!("expected a row vector, got {:?}", x.shape()));
            }
            let mut data = Vec::with_capacity(rows * x.cols());
            for _ in 0..*rows {
                data.extend_from_slice(x.data());
            }
            Ok(Tensor::from_vec(*rows, x.cols(), data))
        }
        Primitive::BroadcastCols(cols) => {
            expect_arity(op, inputs, 1)?;
            let x = inputs[0];
            if x.cols() != 1 {
                return shape_err(op, format!("expected a column vector, got {:?}", x.shape()));
            }
            let mut data = Vec::with_capacity(x.rows() * cols);
            for &v in x.data() {
                data.extend(std::iter::repeat(v).take(*cols));
            }
            Ok(Tensor::from_vec(x.rows(), *cols, data))
        }
    }
}

fn unary(op: &'static str, inputs: &[&Tensor], f: impl Fn(f64) -> f64) -> Result<Tensor> {
    expect_arity(op, inputs, 1)?;
    Ok(inputs[0].map(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::row_vector(v.to_vec())
    }

    #[test]
    fn clamp_saturates_and_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.7));
        let y = g.clamp(x, -5.0, 2.0).unwrap();
        assert_eq!(g.value(y).item(), 2.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 0.0);
    }

    #[test]
    fn clamp_boundary_has_zero_subgradient() {
        let mut g = Graph::new();
        let x = g.leaf(row(&[-5.0, 2.0, 0.5]));
        let y = g.clamp(x, -5.0, 2.0).unwrap();
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let mut g = Graph::new();
        let x = g.constant(row(&[0.0, 0.0, 0.0]));
        let p = g.masked_softmax(x, Axis::Cols, row(&[1.0, 1.0, 0.0])).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn masked_softmax_rejects_fully_masked_lane() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(2, 2));
        let mask = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            g.masked_softmax(x, Axis::Cols, mask),
            Err(Error::AllMasked { row: 1 })
        ));
    }

    #[test]
    fn min2_is_elementwise_and_routes_ties_to_first() {
        let mut g = Graph::new();
        let a = g.leaf(row(&[1.0, 4.0, 2.0]));
        let b = g.leaf(row(&[2.0, 3.0, 2.0]));
        let m = g.min2(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 3.0, 2.0]);
        let s = g.sum_all(m).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).data(), &[1.0, 0.0, 1.0]);
        assert_eq!(g.grad(b).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(row(&[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot { rows: 1, cols: 2 })));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.leaf(row(&[1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::LogDomain { index: 1, .. })));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(2, 3));
        let b = g.leaf(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
        let c = g.constant(row(&[1.0]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn stop_gradient_blocks_only_its_path() {
        // y = x * stop(x): dy/dx through the live path only = stop(x) = x.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let s = g.stop_gradient(x).unwrap();
        let y = g.mul(x, s).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 3.0);
        assert!(!g.node(s).requires_grad);
    }

    #[test]
    fn concat_slice_reshape_round_trip_gradients() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.leaf(Tensor::from_vec(2, 1, vec![5.0, 6.0]));
        let c = g.concat(&[a, b], Axis::Cols).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = g.slice(c, Axis::Cols, 1, 3).unwrap();
        let r = g.reshape(s, 1, 4).unwrap();
        let w = g.constant(Tensor::row_vector(vec![1.0, 10.0, 100.0, 1000.0]));
        let m = g.mul(r, w).unwrap();
        let t = g.sum_all(m).unwrap();
        g.backward(t).unwrap();
        assert_eq!(g.grad(a).data(), &[0.0, 1.0, 0.0, 100.0]);
        assert_eq!(g.grad(b).data(), &[10.0, 1000.0]);
    }

    #[test]
    fn grad_shapes_match_values() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::from_vec(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]));
        let b = g.leaf(Tensor::row_vector(vec![0.0, 1.0]));
        let x = g.constant(Tensor::from_vec(4, 3, (0..12).map(|v| v as f64 * 0.1).collect()));
        let h = g.affine(x, w, b).unwrap();
        let t = g.tanh(h).unwrap();
        let s = g.sum_all(t).unwrap();
        g.backward(s).unwrap();
        for id in [w, b, x, h, t] {
            assert_eq!(g.grad(id).shape(), g.value(id).shape());
        }
    }
}
