use std::collections::HashMap;
use std::sync::Arc;

use super::tensor::{broadcast_index_map, broadcast_shape, broadcastable_to, Tensor};
use crate::error::{Error, Result};

/// Marks an output position of a gather that reads zero (padding).
pub const GATHER_PAD: usize = usize::MAX;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    /// 1 where x > 0, else 0. Not differentiable.
    Step(Var),
    /// sign(x) with sign(0) = 0. Not differentiable.
    Sign(Var),
    /// Max over the last axis, keepdim. Not differentiable.
    MaxLast(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    SumTo(Var, Vec<usize>),
    BroadcastTo(Var, Vec<usize>),
    Reshape(Var, Vec<usize>),
    Gather {
        src: Var,
        index: Arc<[usize]>,
        shape: Vec<usize>,
    },
    ScatterAdd {
        src: Var,
        index: Arc<[usize]>,
        shape: Vec<usize>,
    },
    Slice {
        src: Var,
        offset: usize,
        shape: Vec<usize>,
    },
    Pad {
        src: Var,
        offset: usize,
        shape: Vec<usize>,
    },
    /// Sum of zero-padded parts, each placed at its flat offset. Gathers the
    /// gradients of many slices of one tensor in a single node.
    Assemble {
        parts: Vec<(Var, usize)>,
        shape: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Abs(_) => "abs",
            Op::Step(_) => "step",
            Op::Sign(_) => "sign",
            Op::MaxLast(_) => "max_last",
            Op::MatMul { .. } => "matmul",
            Op::SumTo(..) => "sum_to",
            Op::BroadcastTo(..) => "broadcast_to",
            Op::Reshape(..) => "reshape",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::Assemble { .. } => "assemble",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::MatMul { a, b, .. } => vec![a, b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Step(a)
            | Op::Sign(a)
            | Op::MaxLast(a)
            | Op::SumTo(a, _)
            | Op::BroadcastTo(a, _)
            | Op::Reshape(a, _) => vec![a],
            Op::Gather { src, .. } | Op::ScatterAdd { src, .. } | Op::Slice { src, .. } | Op::Pad { src, .. } => {
                vec![src]
            }
            Op::Assemble { ref parts, .. } => parts.iter().map(|p| p.0).collect(),
        }
    }

    fn differentiable(&self) -> bool {
        !matches!(self, Op::Constant | Op::Step(_) | Op::Sign(_) | Op::MaxLast(_))
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run computation graph with reverse-mode differentiation.
///
/// Every operation evaluates eagerly and appends a node; nodes are therefore
/// topologically ordered by construction. [`Graph::grad`] emits the gradient
/// computation as new nodes of the same graph, so gradients can themselves be
/// differentiated (Hessian-vector products through unrolled inner loops).
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient tensors keyed by leaf.
pub type GradientMap = HashMap<Var, Tensor>;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable input (parameter or data).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_node(Op::Leaf, t, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_node(Op::Constant, t, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn push_node(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = {
            let inputs: Vec<&Tensor> = op.inputs().iter().map(|v| &self.nodes[v.0].value).collect();
            compute(&op, &inputs)?
        };
        if !value.is_finite() {
            return Err(Error::NonFiniteValue(op.name().to_string()));
        }
        let requires_grad = op.differentiable() && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(op, value, requires_grad))
    }

    // ------------------------------------------------------------------
    // primitives

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sqrt(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    /// Absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Abs(a))
    }

    pub fn max_last(&mut self, a: Var) -> Result<Var> {
        self.push(Op::MaxLast(a))
    }

    /// `op(a) · op(b)` for 2-D operands, `op` transposing when its flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        self.push(Op::MatMul { a, b, ta, tb })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Sum over the dimensions along which `shape` would broadcast to `a`.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::SumTo(a, shape.to_vec()))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::BroadcastTo(a, shape.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    /// `out[i] = src.flat[index[i]]`, or 0 where `index[i] == GATHER_PAD`.
    pub fn gather(&mut self, src: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        self.push(Op::Gather { src, index, shape: shape.to_vec() })
    }

    /// `out.flat[index[i]] += src.flat[i]` into zeros of `shape`; pad entries are skipped.
    pub fn scatter_add(&mut self, src: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        self.push(Op::ScatterAdd { src, index, shape: shape.to_vec() })
    }

    /// Contiguous range of the flattened source, viewed with `shape`.
    pub fn slice(&mut self, src: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        self.push(Op::Slice { src, offset, shape: shape.to_vec() })
    }

    fn pad(&mut self, src: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        self.push(Op::Pad { src, offset, shape: shape.to_vec() })
    }

    // ------------------------------------------------------------------
    // evaluation

    /// Re-evaluate the graph up to `output` with some leaves rebound.
    ///
    /// Unbound leaves and constants keep their recorded values. The result is a
    /// pure function of the bindings.
    pub fn eval(&self, output: Var, bindings: &HashMap<Var, Tensor>) -> Result<Tensor> {
        let mut values: Vec<Tensor> = Vec::with_capacity(output.0 + 1);
        for (i, node) in self.nodes[..=output.0].iter().enumerate() {
            let v = match node.op {
                Op::Leaf => match bindings.get(&Var(i)) {
                    Some(t) => {
                        if t.shape() != node.value.shape() {
                            return Err(Error::shape(
                                "eval",
                                format!(
                                    "binding for leaf {i} has shape {:?}, expected {:?}",
                                    t.shape(),
                                    node.value.shape()
                                ),
                            ));
                        }
                        if !t.is_finite() {
                            return Err(Error::NonFiniteValue(format!("binding for leaf {i}")));
                        }
                        t.clone()
                    }
                    None => node.value.clone(),
                },
                Op::Constant => node.value.clone(),
                ref op => {
                    let inputs: Vec<&Tensor> = op.inputs().iter().map(|v| &values[v.0]).collect();
                    let out = compute(op, &inputs)?;
                    if !out.is_finite() {
                        return Err(Error::NonFiniteValue(op.name().to_string()));
                    }
                    out
                }
            };
            values.push(v);
        }
        Ok(values.pop().expect("output node evaluated"))
    }

    // ------------------------------------------------------------------
    // reverse mode

    /// Gradient nodes of scalar `output` with respect to each of `wrt`.
    ///
    /// The returned nodes live in this graph and can be differentiated again.
    /// Inputs that `output` does not depend on get a zero constant.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let out_shape = self.shape(output).to_vec();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarOutput(out_shape));
        }
        let n = output.0 + 1;

        // nodes that depend on some `wrt` through differentiable edges
        let mut depends = vec![false; n];
        for &w in wrt {
            if w.0 < n {
                depends[w.0] = true;
            }
        }
        for i in 0..n {
            if depends[i] || !self.nodes[i].op.differentiable() {
                continue;
            }
            depends[i] = self.nodes[i].op.inputs().iter().any(|v| depends[v.0]);
        }

        let mut adj: Vec<Option<Var>> = vec![None; n];
        if depends[output.0] {
            adj[output.0] = Some(self.constant(Tensor::full(&out_shape, 1.0)));
        }

        // slice gradients are collected per source and assembled once, so
        // many slices of a large parameter vector cost one pass over it
        let mut pending: Vec<Vec<(Var, usize)>> = vec![Vec::new(); n];
        for i in (0..n).rev() {
            if !pending[i].is_empty() {
                let parts = std::mem::take(&mut pending[i]);
                let shape = self.shape(Var(i)).to_vec();
                let assembled = self.push(Op::Assemble { parts, shape })?;
                adj[i] = Some(match adj[i] {
                    None => assembled,
                    Some(prev) => self.add(prev, assembled)?,
                });
            }
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            if let Op::Slice { src, offset, .. } = op {
                if depends[src.0] {
                    pending[src.0].push((g, offset));
                }
                continue;
            }
            let out = Var(i);
            for (input, contrib) in self.vjp(&op, out, g, &depends)? {
                adj[input.0] = Some(match adj[input.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zeros = Tensor::zeros(self.shape(w));
                    Ok(self.constant(zeros))
                }
            })
            .collect()
    }

    /// Numeric gradients of scalar `output` with respect to `wrt`.
    pub fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<GradientMap> {
        let grads = self.grad(output, wrt)?;
        Ok(wrt.iter().zip(grads).map(|(&w, g)| (w, self.value(g).clone())).collect())
    }

    /// Vector-Jacobian contributions of one node, restricted to inputs that
    /// lead back to a differentiation target.
    fn vjp(&mut self, op: &Op, out: Var, g: Var, depends: &[bool]) -> Result<Vec<(Var, Var)>> {
        let need = |v: Var| depends[v.0];
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf | Op::Constant | Op::Step(_) | Op::Sign(_) | Op::MaxLast(_) => {}
            Op::Add(a, b) => {
                if need(a) {
                    res.push((a, self.unbroadcast(g, a)?));
                }
                if need(b) {
                    res.push((b, self.unbroadcast(g, b)?));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    res.push((a, self.unbroadcast(g, a)?));
                }
                if need(b) {
                    let ng = self.neg(g)?;
                    res.push((b, self.unbroadcast(ng, b)?));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    let ga = self.mul(g, b)?;
                    res.push((a, self.unbroadcast(ga, a)?));
                }
                if need(b) {
                    let gb = self.mul(g, a)?;
                    res.push((b, self.unbroadcast(gb, b)?));
                }
            }
            Op::Div(a, b) => {
                if need(a) {
                    let ga = self.div(g, b)?;
                    res.push((a, self.unbroadcast(ga, a)?));
                }
                if need(b) {
                    // d(a/b)/db = -(a/b)/b
                    let t = self.mul(g, out)?;
                    let t = self.div(t, b)?;
                    let gb = self.neg(t)?;
                    res.push((b, self.unbroadcast(gb, b)?));
                }
            }
            Op::Neg(a) => res.push((a, self.neg(g)?)),
            Op::Scale(a, c) => res.push((a, self.scale(g, c)?)),
            Op::Exp(a) => res.push((a, self.mul(g, out)?)),
            Op::Log(a) => res.push((a, self.div(g, a)?)),
            Op::Sqrt(a) => {
                let t = self.div(g, out)?;
                res.push((a, self.scale(t, 0.5)?));
            }
            Op::Sigmoid(a) => {
                let one = self.scalar(1.0);
                let om = self.sub(one, out)?;
                let d = self.mul(out, om)?;
                res.push((a, self.mul(g, d)?));
            }
            Op::Relu(a) => {
                let mask = self.push(Op::Step(a))?;
                res.push((a, self.mul(g, mask)?));
            }
            Op::Abs(a) => {
                let s = self.push(Op::Sign(a))?;
                res.push((a, self.mul(g, s)?));
            }
            Op::MatMul { a, b, ta, tb } => {
                // C = op(A) op(B)
                if need(a) {
                    let ga = if ta { self.matmul_t(b, g, tb, true)? } else { self.matmul_t(g, b, false, !tb)? };
                    res.push((a, ga));
                }
                if need(b) {
                    let gb = if tb { self.matmul_t(g, a, true, ta)? } else { self.matmul_t(a, g, !ta, false)? };
                    res.push((b, gb));
                }
            }
            Op::SumTo(a, _) => {
                let shape = self.shape(a).to_vec();
                res.push((a, self.broadcast_to(g, &shape)?));
            }
            Op::BroadcastTo(a, _) => {
                let shape = self.shape(a).to_vec();
                res.push((a, self.sum_to(g, &shape)?));
            }
            Op::Reshape(a, _) => {
                let shape = self.shape(a).to_vec();
                res.push((a, self.reshape(g, &shape)?));
            }
            Op::Gather { src, ref index, .. } => {
                let shape = self.shape(src).to_vec();
                res.push((src, self.scatter_add(g, index.clone(), &shape)?));
            }
            Op::ScatterAdd { src, ref index, .. } => {
                let shape = self.shape(src).to_vec();
                res.push((src, self.gather(g, index.clone(), &shape)?));
            }
            Op::Slice { src, offset, .. } => {
                let shape = self.shape(src).to_vec();
                res.push((src, self.pad(g, offset, &shape)?));
            }
            Op::Pad { src, offset, .. } => {
                let shape = self.shape(src).to_vec();
                res.push((src, self.slice(g, offset, &shape)?));
            }
            Op::Assemble { ref parts, .. } => {
                for &(p, offset) in parts {
                    if need(p) {
                        let shape = self.shape(p).to_vec();
                        res.push((p, self.slice(g, offset, &shape)?));
                    }
                }
            }
        }
        Ok(res)
    }

    fn unbroadcast(&mut self, g: Var, target: Var) -> Result<Var> {
        let shape = self.shape(target).to_vec();
        self.sum_to(g, &shape)
    }
}

// ----------------------------------------------------------------------
// kernels

fn compute(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    Ok(match *op {
        Op::Leaf | Op::Constant => unreachable!("leaves are never recomputed"),
        Op::Add(..) => binary("add", inputs[0], inputs[1], |x, y| x + y)?,
        Op::Sub(..) => binary("sub", inputs[0], inputs[1], |x, y| x - y)?,
        Op::Mul(..) => binary("mul", inputs[0], inputs[1], |x, y| x * y)?,
        Op::Div(..) => binary("div", inputs[0], inputs[1], |x, y| x / y)?,
        Op::Neg(_) => unary(inputs[0], |x| -x),
        Op::Scale(_, c) => unary(inputs[0], |x| c * x),
        Op::Exp(_) => unary(inputs[0], f64::exp),
        Op::Log(_) => unary(inputs[0], f64::ln),
        Op::Sqrt(_) => unary(inputs[0], f64::sqrt),
        Op::Sigmoid(_) => unary(inputs[0], sigmoid),
        Op::Relu(_) => unary(inputs[0], |x| x.max(0.0)),
        Op::Abs(_) => unary(inputs[0], f64::abs),
        Op::Step(_) => unary(inputs[0], |x| if x > 0.0 { 1.0 } else { 0.0 }),
        Op::Sign(_) => unary(inputs[0], |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Op::MaxLast(_) => {
            let a = inputs[0];
            let shape = a.shape();
            let last = *shape.last().unwrap_or(&1);
            let data: Vec<f64> =
                a.data().chunks(last).map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
            let mut out_shape = shape.to_vec();
            if let Some(l) = out_shape.last_mut() {
                *l = 1;
            }
            Tensor::from_parts(out_shape, data)
        }
        Op::MatMul { ta, tb, .. } => matmul_kernel(inputs[0], inputs[1], ta, tb)?,
        Op::SumTo(_, ref shape) => {
            let a = inputs[0];
            if !broadcastable_to(shape, a.shape()) {
                return Err(Error::shape("sum_to", format!("cannot reduce {:?} to {:?}", a.shape(), shape)));
            }
            let map = broadcast_index_map(shape, a.shape());
            let mut data = vec![0.0; shape.iter().product()];
            for (x, &j) in a.data().iter().zip(&map) {
                data[j] += x;
            }
            Tensor::from_parts(shape.clone(), data)
        }
        Op::BroadcastTo(_, ref shape) => {
            let a = inputs[0];
            if !broadcastable_to(a.shape(), shape) {
                return Err(Error::shape("broadcast_to", format!("cannot broadcast {:?} to {:?}", a.shape(), shape)));
            }
            let map = broadcast_index_map(a.shape(), shape);
            let src = a.data();
            Tensor::from_parts(shape.clone(), map.iter().map(|&j| src[j]).collect())
        }
        Op::Reshape(_, ref shape) => {
            let a = inputs[0];
            if shape.iter().product::<usize>() != a.numel() {
                return Err(Error::shape("reshape", format!("cannot reshape {:?} to {:?}", a.shape(), shape)));
            }
            Tensor::from_parts(shape.clone(), a.data().to_vec())
        }
        Op::Gather { ref index, ref shape, .. } => {
            let a = inputs[0];
            if index.len() != shape.iter().product::<usize>() {
                return Err(Error::shape("gather", "index length differs from output size"));
            }
            let src = a.data();
            let mut data = Vec::with_capacity(index.len());
            for &j in index.iter() {
                if j == GATHER_PAD {
                    data.push(0.0);
                } else if j < src.len() {
                    data.push(src[j]);
                } else {
                    return Err(Error::shape("gather", format!("index {j} out of {}", src.len())));
                }
            }
            Tensor::from_parts(shape.clone(), data)
        }
        Op::ScatterAdd { ref index, ref shape, .. } => {
            let a = inputs[0];
            if index.len() != a.numel() {
                return Err(Error::shape("scatter_add", "index length differs from source size"));
            }
            let n: usize = shape.iter().product();
            let mut data = vec![0.0; n];
            for (&j, &x) in index.iter().zip(a.data()) {
                if j == GATHER_PAD {
                    continue;
                }
                if j >= n {
                    return Err(Error::shape("scatter_add", format!("index {j} out of {n}")));
                }
                data[j] += x;
            }
            Tensor::from_parts(shape.clone(), data)
        }
        Op::Slice { offset, ref shape, .. } => {
            let a = inputs[0];
            let len: usize = shape.iter().product();
            if offset + len > a.numel() {
                return Err(Error::shape("slice", format!("range {offset}..{} exceeds {}", offset + len, a.numel())));
            }
            Tensor::from_parts(shape.clone(), a.data()[offset..offset + len].to_vec())
        }
        Op::Pad { offset, ref shape, .. } => {
            let a = inputs[0];
            let n: usize = shape.iter().product();
            if offset + a.numel() > n {
                return Err(Error::shape("pad", "source does not fit target"));
            }
            let mut data = vec![0.0; n];
            data[offset..offset + a.numel()].copy_from_slice(a.data());
            Tensor::from_parts(shape.clone(), data)
        }
        Op::Assemble { ref parts, ref shape } => {
            let n: usize = shape.iter().product();
            let mut data = vec![0.0; n];
            for (a, &(_, offset)) in inputs.iter().zip(parts) {
                if offset + a.numel() > n {
                    return Err(Error::shape("assemble", "part does not fit target"));
                }
                for (d, x) in data[offset..offset + a.numel()].iter_mut().zip(a.data()) {
                    *d += x;
                }
            }
            Tensor::from_parts(shape.clone(), data)
        }
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn binary(name: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let shape = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| Error::shape(name, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape())))?;
    let (ad, bd) = (a.data(), b.data());
    let data = if b.numel() == 1 && shape == a.shape() {
        let y = bd[0];
        ad.iter().map(|&x| f(x, y)).collect()
    } else if a.numel() == 1 && shape == b.shape() {
        let x = ad[0];
        bd.iter().map(|&y| f(x, y)).collect()
    } else {
        let ma = broadcast_index_map(a.shape(), &shape);
        let mb = broadcast_index_map(b.shape(), &shape);
        ma.iter().zip(&mb).map(|(&i, &j)| f(ad[i], bd[j])).collect()
    };
    Ok(Tensor::from_parts(shape, data))
}

/// Four independent accumulators let the compiler vectorize the loop.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn matmul_kernel(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::shape("matmul", format!("operands must be 2-D, got {:?} and {:?}", a.shape(), b.shape())));
    }
    let (m, k) = if ta { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
    let (k2, n) = if tb { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!(
                "inner dimensions differ: {:?}{} x {:?}{}",
                a.shape(),
                if ta { "ᵀ" } else { "" },
                b.shape(),
                if tb { "ᵀ" } else { "" }
            ),
        ));
    }
    let ad = a.data();
    let bd = b.data();
    if tb && !ta {
        // A·Bᵀ: both operands are read along contiguous rows
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bd[j * k..(j + 1) * k];
                out.push(dot(arow, brow));
            }
        }
        return Ok(Tensor::from_parts(vec![m, n], out));
    }
    // materialize op(B) as k×n row-major for a cache-friendly inner loop
    let bt;
    let bm: &[f64] = if tb {
        let mut t = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                t[p * n + j] = bd[j * k + p];
            }
        }
        bt = t;
        &bt
    } else {
        bd
    };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = if ta { ad[p * m + i] } else { ad[i * k + p] };
            if x == 0.0 {
                continue;
            }
            let brow = &bm[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}
