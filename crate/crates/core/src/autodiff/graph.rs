use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        NodeId(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Placeholder,
    Parameter { trainable: bool },
}

/// The closed set of differentiable primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    MatMul,
    Transpose,
    GatherRows,
    Tanh,
    Relu,
    Sigmoid,
    Exp,
    Log,
    SoftmaxRows,
    SumAxis,
    MeanAxis,
    ConcatAxis,
    Scale,
    ClampMin,
    L2NormalizeRows,
}

impl Primitive {
    pub const ALL: [Primitive; 18] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::MatMul,
        Primitive::Transpose,
        Primitive::GatherRows,
        Primitive::Tanh,
        Primitive::Relu,
        Primitive::Sigmoid,
        Primitive::Exp,
        Primitive::Log,
        Primitive::SoftmaxRows,
        Primitive::SumAxis,
        Primitive::MeanAxis,
        Primitive::ConcatAxis,
        Primitive::Scale,
        Primitive::ClampMin,
        Primitive::L2NormalizeRows,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::GatherRows => "gather_rows",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::SoftmaxRows => "softmax_rows",
            Primitive::SumAxis => "sum_axis",
            Primitive::MeanAxis => "mean_axis",
            Primitive::ConcatAxis => "concat_axis",
            Primitive::Scale => "scale",
            Primitive::ClampMin => "clamp_min",
            Primitive::L2NormalizeRows => "l2_normalize_rows",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Input { name: String, kind: InputKind },
    Constant(Tensor),
    Add,
    Sub,
    Mul,
    MatMul,
    Transpose,
    GatherRows(Vec<usize>),
    Tanh,
    Relu,
    Sigmoid,
    Exp,
    Log,
    SoftmaxRows,
    SumAxis(usize),
    MeanAxis(usize),
    ConcatAxis(usize),
    Scale(f64),
    ClampMin(f64),
    L2NormalizeRows,
}

impl Op {
    pub fn primitive(&self) -> Option<Primitive> {
        Some(match self {
            Op::Input { .. } | Op::Constant(_) => return None,
            Op::Add => Primitive::Add,
            Op::Sub => Primitive::Sub,
            Op::Mul => Primitive::Mul,
            Op::MatMul => Primitive::MatMul,
            Op::Transpose => Primitive::Transpose,
            Op::GatherRows(_) => Primitive::GatherRows,
            Op::Tanh => Primitive::Tanh,
            Op::Relu => Primitive::Relu,
            Op::Sigmoid => Primitive::Sigmoid,
            Op::Exp => Primitive::Exp,
            Op::Log => Primitive::Log,
            Op::SoftmaxRows => Primitive::SoftmaxRows,
            Op::SumAxis(_) => Primitive::SumAxis,
            Op::MeanAxis(_) => Primitive::MeanAxis,
            Op::ConcatAxis(_) => Primitive::ConcatAxis,
            Op::Scale(_) => Primitive::Scale,
            Op::ClampMin(_) => Primitive::ClampMin,
            Op::L2NormalizeRows => Primitive::L2NormalizeRows,
        })
    }

    fn label(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant(_) => "constant",
            other => other.primitive().map(Primitive::name).unwrap_or("?"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub parents: Vec<NodeId>,
}

/// Static computation graph. Nodes are appended in topological order: a
/// node's parents always have smaller ids, so the graph is acyclic by
/// construction.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: HashMap<String, NodeId>,
}

/// Source of input tensors by name.
pub trait Bindings {
    fn tensor(&self, name: &str) -> Option<&Tensor>;
}

impl Bindings for HashMap<String, Tensor> {
    fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl Bindings for BTreeMap<String, Tensor> {
    fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl<B: Bindings + ?Sized> Bindings for &B {
    fn tensor(&self, name: &str) -> Option<&Tensor> {
        (**self).tensor(name)
    }
}

/// Forward values of every node.
#[derive(Debug, Clone)]
pub struct Evaluation<'a> {
    values: Vec<Cow<'a, Tensor>>,
}

impl<'a> Evaluation<'a> {
    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.values[node.0]
    }
}

/// Gradients of a scalar output with respect to graph nodes.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    inputs: Vec<(String, InputKind, NodeId, Vec<usize>)>,
}

impl Gradients {
    pub fn node(&self, node: NodeId) -> Option<&Tensor> {
        self.by_node[node.0].as_ref()
    }

    /// Gradient for a named input; zero-filled when the output does not depend on it.
    pub fn input(&self, name: &str) -> Option<Tensor> {
        self.inputs
            .iter()
            .find(|(n, ..)| n == name)
            .map(|(_, _, id, shape)| {
                self.by_node[id.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(shape.clone()))
            })
    }

    /// Gradients for every trainable parameter, zero for the unreached ones.
    pub fn parameters(&self) -> BTreeMap<String, Tensor> {
        self.inputs
            .iter()
            .filter(|(_, kind, ..)| matches!(kind, InputKind::Parameter { trainable: true }))
            .map(|(name, _, id, shape)| {
                let g = self.by_node[id.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(shape.clone()));
                (name.clone(), g)
            })
            .collect()
    }
}

fn shape_err(node: usize, op: &Op, expected: impl Into<String>, actual: impl Into<String>) -> Error {
    Error::Shape {
        node,
        op: op.label(),
        expected: expected.into(),
        actual: actual.into(),
    }
}

/// Split a shape around `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>) -> NodeId {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(Node { op, parents });
        NodeId(self.nodes.len() - 1)
    }

    fn input(&mut self, name: &str, kind: InputKind) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(
            Op::Input {
                name: name.to_string(),
                kind,
            },
            vec![],
        );
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// Named input that receives gradients (used for data and gradient checks).
    pub fn placeholder(&mut self, name: &str) -> NodeId {
        self.input(name, InputKind::Placeholder)
    }

    pub fn parameter(&mut self, name: &str, trainable: bool) -> NodeId {
        self.input(name, InputKind::Parameter { trainable })
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value), vec![])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul, vec![a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose, vec![a])
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: Vec<usize>) -> NodeId {
        self.push(Op::GatherRows(indices), vec![table])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh, vec![a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu, vec![a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid, vec![a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp, vec![a])
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log, vec![a])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SoftmaxRows, vec![a])
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::SumAxis(axis), vec![a])
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::MeanAxis(axis), vec![a])
    }

    pub fn concat_axis(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        self.push(Op::ConcatAxis(axis), parts.to_vec())
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(factor), vec![a])
    }

    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> NodeId {
        self.push(Op::ClampMin(floor), vec![a])
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::L2NormalizeRows, vec![a])
    }

    /// `ln(max(x, floor))`, the only way models take logarithms.
    pub fn safe_log(&mut self, a: NodeId, floor: f64) -> NodeId {
        let c = self.clamp_min(a, floor);
        self.log(c)
    }

    /// Sum of every element, as a `[1, 1]` node (input must be rank 2).
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let rows = self.sum_axis(a, 0);
        self.sum_axis(rows, 1)
    }

    /// Names and kinds of all inputs, in creation order.
    pub fn inputs(&self) -> Vec<(String, InputKind, NodeId)> {
        let mut out: Vec<_> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Input { name, kind } => Some((name.clone(), *kind, NodeId(i))),
                _ => None,
            })
            .collect();
        out.sort_by_key(|(_, _, id)| *id);
        out
    }

    /// Computes every node's value. Deterministic: identical bindings yield
    /// bit-identical values.
    pub fn evaluate<'a, B: Bindings>(&'a self, bindings: &'a B) -> Result<Evaluation<'a>> {
        let mut values: Vec<Cow<'a, Tensor>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match &node.op {
                Op::Input { name, .. } => Cow::Borrowed(
                    bindings
                        .tensor(name)
                        .ok_or_else(|| Error::Unbound(name.clone()))?,
                ),
                Op::Constant(t) => Cow::Borrowed(t),
                op => {
                    let parents: Vec<&Tensor> =
                        node.parents.iter().map(|p| values[p.0].as_ref()).collect();
                    Cow::Owned(forward(i, op, &parents)?)
                }
            };
            values.push(v);
        }
        Ok(Evaluation { values })
    }

    /// Reverse-mode sweep from a one-element `output`.
    pub fn backward(&self, eval: &Evaluation<'_>, output: NodeId) -> Result<Gradients> {
        let out_val = eval.value(output);
        if out_val.len() != 1 {
            return Err(Error::NotScalar {
                node: output.0,
                shape: out_val.shape().to_vec(),
            });
        }
        let needs = self.needs_grad();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::filled(out_val.shape().to_vec(), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.parents.is_empty() {
                let parents: Vec<&Tensor> =
                    node.parents.iter().map(|p| eval.value(*p)).collect();
                let y = eval.value(NodeId(i));
                for (slot, parent) in node.parents.iter().enumerate() {
                    if !needs[parent.0] {
                        continue;
                    }
                    let contrib = adjoint(&node.op, slot, &parents, y, &g);
                    match &mut grads[parent.0] {
                        Some(acc) => acc.add_assign(&contrib),
                        empty => *empty = Some(contrib),
                    }
                }
            }
            grads[i] = Some(g);
        }

        let inputs = self
            .inputs()
            .into_iter()
            .map(|(name, kind, id)| (name, kind, id, eval.value(id).shape().to_vec()))
            .collect();
        Ok(Gradients {
            by_node: grads,
            inputs,
        })
    }

    fn needs_grad(&self) -> Vec<bool> {
        let mut needs = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            needs[i] = match &node.op {
                Op::Input { kind, .. } => !matches!(kind, InputKind::Parameter { trainable: false }),
                Op::Constant(_) => false,
                _ => node.parents.iter().any(|p| needs[p.0]),
            };
        }
        needs
    }
}

fn same_shape(i: usize, op: &Op, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            i,
            op,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

fn matrix(i: usize, op: &Op, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| shape_err(i, op, "rank-2 tensor", format!("{:?}", t.shape())))
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn forward(i: usize, op: &Op, p: &[&Tensor]) -> Result<Tensor> {
    Ok(match op {
        Op::Input { .. } | Op::Constant(_) => unreachable!("handled by evaluate"),
        Op::Add | Op::Sub | Op::Mul => {
            same_shape(i, op, p[0], p[1])?;
            match op {
                Op::Add => zip_with(p[0], p[1], |x, y| x + y),
                Op::Sub => zip_with(p[0], p[1], |x, y| x - y),
                _ => zip_with(p[0], p[1], |x, y| x * y),
            }
        }
        Op::MatMul => {
            let (n, k) = matrix(i, op, p[0])?;
            let (k2, m) = matrix(i, op, p[1])?;
            if k != k2 {
                return Err(shape_err(
                    i,
                    op,
                    format!("right operand with {k} rows"),
                    format!("{:?} · {:?}", p[0].shape(), p[1].shape()),
                ));
            }
            Tensor::new(vec![n, m], matmul_raw(p[0].data(), p[1].data(), n, k, m))?
        }
        Op::Transpose => {
            matrix(i, op, p[0])?;
            p[0].transposed().expect("matrix")
        }
        Op::GatherRows(idx) => {
            let (rows, cols) = matrix(i, op, p[0])?;
            if idx.is_empty() {
                return Err(shape_err(i, op, "at least one index", "none"));
            }
            if let Some(bad) = idx.iter().find(|&&r| r >= rows) {
                return Err(shape_err(
                    i,
                    op,
                    format!("row index < {rows}"),
                    format!("index {bad}"),
                ));
            }
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &r in idx {
                data.extend_from_slice(p[0].row_slice(r));
            }
            Tensor::new(vec![idx.len(), cols], data)?
        }
        Op::Tanh => p[0].map(f64::tanh),
        Op::Relu => p[0].map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Sigmoid => p[0].map(sigmoid),
        Op::Exp => p[0].map(f64::exp),
        Op::Log => {
            if let Some(bad) = p[0].data().iter().find(|&&x| !(x > 0.0)) {
                return Err(Error::Domain {
                    node: i,
                    op: "log",
                    message: format!("input {bad} is not positive"),
                });
            }
            p[0].map(f64::ln)
        }
        Op::SoftmaxRows => {
            let (_, c) = matrix(i, op, p[0])?;
            let mut out = p[0].clone();
            for row in out.data_mut().chunks_mut(c) {
                softmax_in_place(row);
            }
            out
        }
        Op::SumAxis(axis) | Op::MeanAxis(axis) => {
            let shape = p[0].shape();
            if *axis >= shape.len() {
                return Err(shape_err(
                    i,
                    op,
                    format!("rank > {axis}"),
                    format!("{shape:?}"),
                ));
            }
            let (outer, len, inner) = axis_split(shape, *axis);
            let div = if matches!(op, Op::MeanAxis(_)) { len as f64 } else { 1.0 };
            let src = p[0].data();
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    for j in 0..inner {
                        data[o * inner + j] += src[base + j];
                    }
                }
            }
            if div != 1.0 {
                data.iter_mut().for_each(|v| *v /= div);
            }
            let mut out_shape = shape.to_vec();
            out_shape[*axis] = 1;
            Tensor::new(out_shape, data)?
        }
        Op::ConcatAxis(axis) => {
            let first = p.first().ok_or_else(|| shape_err(i, op, "at least one part", "none"))?;
            let rank = first.rank();
            if *axis >= rank {
                return Err(shape_err(i, op, format!("rank > {axis}"), format!("{:?}", first.shape())));
            }
            for t in p {
                let compatible = t.rank() == rank
                    && t.shape()
                        .iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(d, (a, b))| d == *axis || a == b);
                if !compatible {
                    return Err(shape_err(
                        i,
                        op,
                        format!("extents matching {:?} off axis {axis}", first.shape()),
                        format!("{:?}", t.shape()),
                    ));
                }
            }
            let (outer, _, inner) = axis_split(first.shape(), *axis);
            let total: usize = p.iter().map(|t| t.shape()[*axis]).sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in p {
                    let len = t.shape()[*axis];
                    data.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
                }
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = total;
            Tensor::new(shape, data)?
        }
        Op::Scale(f) => p[0].map(|x| x * f),
        Op::ClampMin(floor) => p[0].map(|x| if x > *floor { x } else { *floor }),
        Op::L2NormalizeRows => {
            let (_, c) = matrix(i, op, p[0])?;
            let mut out = p[0].clone();
            for row in out.data_mut().chunks_mut(c) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
            out
        }
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Contribution of `g` (gradient at the node) to parent number `slot`.
fn adjoint(op: &Op, slot: usize, p: &[&Tensor], y: &Tensor, g: &Tensor) -> Tensor {
    match op {
        Op::Input { .. } | Op::Constant(_) => unreachable!("inputs have no parents"),
        Op::Add => g.clone(),
        Op::Sub => {
            if slot == 0 {
                g.clone()
            } else {
                g.map(|v| -v)
            }
        }
        Op::Mul => zip_with(g, p[1 - slot], |a, b| a * b),
        Op::MatMul => {
            let (n, k) = p[0].dims2().expect("checked");
            let m = p[1].dims2().expect("checked").1;
            if slot == 0 {
                Tensor::new(vec![n, k], matmul_nt(g.data(), p[1].data(), n, m, k)).expect("shape")
            } else {
                Tensor::new(vec![k, m], matmul_tn(p[0].data(), g.data(), n, k, m)).expect("shape")
            }
        }
        Op::Transpose => g.transposed().expect("matrix"),
        Op::GatherRows(idx) => {
            // scatter-add back into the gathered table
            let mut out = Tensor::zeros_like(p[0]);
            let cols = out.dims2().expect("checked").1;
            let data = out.data_mut();
            for (r, &row) in idx.iter().enumerate() {
                let src = &g.data()[r * cols..(r + 1) * cols];
                for (d, s) in data[row * cols..(row + 1) * cols].iter_mut().zip(src) {
                    *d += s;
                }
            }
            out
        }
        Op::Tanh => zip_with(g, y, |g, y| g * (1.0 - y * y)),
        Op::Relu => zip_with(g, p[0], |g, x| if x > 0.0 { g } else { 0.0 }),
        Op::Sigmoid => zip_with(g, y, |g, y| g * y * (1.0 - y)),
        Op::Exp => zip_with(g, y, |g, y| g * y),
        Op::Log => zip_with(g, p[0], |g, x| g / x),
        Op::SoftmaxRows => {
            let c = y.dims2().expect("checked").1;
            let mut out = Tensor::zeros_like(y);
            for ((o, yr), gr) in out
                .data_mut()
                .chunks_mut(c)
                .zip(y.data().chunks(c))
                .zip(g.data().chunks(c))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((ov, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = yv * (gv - dot);
                }
            }
            out
        }
        Op::SumAxis(axis) | Op::MeanAxis(axis) => {
            let shape = p[0].shape();
            let (outer, len, inner) = axis_split(shape, *axis);
            let div = if matches!(op, Op::MeanAxis(_)) { len as f64 } else { 1.0 };
            let mut data = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    for j in 0..inner {
                        data[(o * len + k) * inner + j] = g.data()[o * inner + j] / div;
                    }
                }
            }
            Tensor::new(shape.to_vec(), data).expect("shape")
        }
        Op::ConcatAxis(axis) => {
            let shape = p[slot].shape();
            let (outer, len, inner) = axis_split(shape, *axis);
            let total = g.shape()[*axis];
            let offset: usize = p[..slot].iter().map(|t| t.shape()[*axis]).sum();
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let start = (o * total + offset) * inner;
                data.extend_from_slice(&g.data()[start..start + len * inner]);
            }
            Tensor::new(shape.to_vec(), data).expect("shape")
        }
        Op::Scale(f) => g.map(|v| v * f),
        Op::ClampMin(floor) => zip_with(g, p[0], |g, x| if x > *floor { g } else { 0.0 }),
        Op::L2NormalizeRows => {
            let c = y.dims2().expect("checked").1;
            let mut out = Tensor::zeros_like(y);
            for (((o, yr), gr), xr) in out
                .data_mut()
                .chunks_mut(c)
                .zip(y.data().chunks(c))
                .zip(g.data().chunks(c))
                .zip(p[0].data().chunks(c))
            {
                let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((ov, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = (gv - yv * dot) / norm;
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, Tensor)]) -> HashMap<String, Tensor> {
        pairs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }

    #[test]
    fn matmul_forward() {
        let mut g = Graph::new();
        let a = g.placeholder("a");
        let b = g.placeholder("b");
        let c = g.matmul(a, b);
        let b_ = bind(&[
            ("a", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])),
            ("b", Tensor::from_rows(&[vec![1.0], vec![1.0]])),
        ]);
        let ev = g.evaluate(&b_).unwrap();
        assert_eq!(ev.value(c).shape(), &[2, 1]);
        assert_eq!(ev.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_and_normalize_examples() {
        let mut g = Graph::new();
        let x = g.placeholder("x");
        let s = g.softmax_rows(x);
        let n = g.l2_normalize_rows(x);
        let b = bind(&[("x", Tensor::from_rows(&[vec![0.0, 0.0]]))]);
        assert_eq!(g.evaluate(&b).unwrap().value(s).data(), &[0.5, 0.5]);
        let b = bind(&[("x", Tensor::from_rows(&[vec![3.0, 4.0]]))]);
        let ev = g.evaluate(&b).unwrap();
        let v = ev.value(n).data();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut g = Graph::new();
        let a = g.placeholder("a");
        let b = g.placeholder("b");
        let _ = g.add(a, b);
        let b_ = bind(&[("a", Tensor::vector(vec![1.0, 2.0])), ("b", Tensor::vector(vec![1.0]))]);
        let err = g.evaluate(&b_).unwrap_err();
        match err {
            Error::Shape { node, op, .. } => {
                assert_eq!(node, 2);
                assert_eq!(op, "add");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_domain_error() {
        let mut g = Graph::new();
        let a = g.placeholder("a");
        let _ = g.log(a);
        let b = bind(&[("a", Tensor::vector(vec![1.0, 0.0]))]);
        assert!(matches!(g.evaluate(&b), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn unbound_input_errors() {
        let mut g = Graph::new();
        let a = g.placeholder("a");
        let _ = g.tanh(a);
        assert!(matches!(g.evaluate(&HashMap::new()), Err(Error::Unbound(_))));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.placeholder("x");
        let sq = g.mul(x, x);
        let s = g.sum_axis(sq, 0);
        let b = bind(&[("x", Tensor::vector(vec![1.0, 2.0]))]);
        let ev = g.evaluate(&b).unwrap();
        let grads = g.backward(&ev, s).unwrap();
        assert_eq!(grads.input("x").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn grad_of_tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.placeholder("x");
        let t = g.tanh(x);
        let b = bind(&[("x", Tensor::vector(vec![0.0]))]);
        let ev = g.evaluate(&b).unwrap();
        assert_eq!(g.backward(&ev, t).unwrap().input("x").unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.placeholder("x");
        let t = g.tanh(x);
        let b = bind(&[("x", Tensor::vector(vec![0.0, 1.0]))]);
        let ev = g.evaluate(&b).unwrap();
        assert!(matches!(g.backward(&ev, t), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn unreached_parameters_get_zero_gradients() {
        let mut g = Graph::new();
        let w = g.parameter("w", true);
        let _unused = g.parameter("u", true);
        let frozen = g.parameter("f", false);
        let y = g.mul(w, frozen);
        let s = g.sum_all(y);
        let b = bind(&[
            ("w", Tensor::from_rows(&[vec![1.0, 2.0]])),
            ("u", Tensor::from_rows(&[vec![5.0]])),
            ("f", Tensor::from_rows(&[vec![3.0, 4.0]])),
        ]);
        let ev = g.evaluate(&b).unwrap();
        let grads = g.backward(&ev, s).unwrap().parameters();
        assert_eq!(grads.len(), 2);
        assert_eq!(grads["w"].data(), &[3.0, 4.0]);
        assert_eq!(grads["u"].data(), &[0.0]);
    }

    #[test]
    fn gather_scatter_conserves_mass() {
        let mut g = Graph::new();
        let t = g.parameter("t", true);
        let rows = g.gather_rows(t, vec![2, 0, 2]);
        let s = g.sum_all(rows);
        let b = bind(&[("t", Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]))]);
        let ev = g.evaluate(&b).unwrap();
        assert_eq!(ev.value(s).data(), &[7.0]);
        let gt = g.backward(&ev, s).unwrap().input("t").unwrap();
        assert_eq!(gt.data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.placeholder("x");
        let r = g.relu(x);
        let s = g.sum_axis(r, 0);
        let b = bind(&[("x", Tensor::vector(vec![0.0, 1.0, -1.0]))]);
        let ev = g.evaluate(&b).unwrap();
        assert_eq!(g.backward(&ev, s).unwrap().input("x").unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn concat_axis_layouts() {
        let mut g = Graph::new();
        let a = g.placeholder("a");
        let b = g.placeholder("b");
        let c0 = g.concat_axis(&[a, b], 0);
        let c1 = g.concat_axis(&[a, b], 1);
        let bd = bind(&[
            ("a", Tensor::from_rows(&[vec![1.0, 2.0]])),
            ("b", Tensor::from_rows(&[vec![3.0, 4.0]])),
        ]);
        let ev = g.evaluate(&bd).unwrap();
        assert_eq!(ev.value(c0).shape(), &[2, 2]);
        assert_eq!(ev.value(c0).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ev.value(c1).shape(), &[1, 4]);
        assert_eq!(ev.value(c1).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sum_axis_keeps_dims() {
        let mut g = Graph::new();
        let a = g.placeholder("a");
        let s0 = g.sum_axis(a, 0);
        let m1 = g.mean_axis(a, 1);
        let bd = bind(&[("a", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]))]);
        let ev = g.evaluate(&bd).unwrap();
        assert_eq!(ev.value(s0).shape(), &[1, 2]);
        assert_eq!(ev.value(s0).data(), &[4.0, 6.0]);
        assert_eq!(ev.value(m1).shape(), &[2, 1]);
        assert_eq!(ev.value(m1).data(), &[1.5, 3.5]);
    }

    #[test]
    fn zero_row_normalizes_to_zero() {
        let mut g = Graph::new();
        let a = g.placeholder("a");
        let n = g.l2_normalize_rows(a);
        let bd = bind(&[("a", Tensor::from_rows(&[vec![0.0, 0.0]]))]);
        assert_eq!(g.evaluate(&bd).unwrap().value(n).data(), &[0.0, 0.0]);
    }
}
