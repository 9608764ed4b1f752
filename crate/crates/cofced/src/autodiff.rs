//! Tape-based reverse-mode automatic differentiation over dense `f64`
//! vectors.
//!
//! Every intermediate value is an `Array1<f64>` node on a growing tape;
//! scalars are length-1 vectors. Trainable tensors live in a [`ParamStore`]
//! and enter the tape through [`Graph::param`] (vectors) and
//! [`Graph::matvec`] (matrix-vector products), so [`Graph::backward`] can
//! accumulate one gradient per named tensor. Node ids are only ever created
//! from existing ids, which keeps the tape topologically ordered and makes
//! the backward pass a single reverse sweep.

use ndarray::{Array1, Array2};
use rand::Rng;
use std::collections::HashMap;

/// Index of a node on the tape.
pub type NodeId = usize;
/// Index of a tensor in a [`ParamStore`].
pub type ParamId = usize;

/// A dense trainable tensor (or its gradient).
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Vector(Array1<f64>),
    Matrix(Array2<f64>),
}

impl Tensor {
    pub fn zeros_like(&self) -> Tensor {
        match self {
            Tensor::Vector(v) => Tensor::Vector(Array1::zeros(v.len())),
            Tensor::Matrix(m) => Tensor::Matrix(Array2::zeros(m.dim())),
        }
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        match self {
            Tensor::Vector(v) => v.len(),
            Tensor::Matrix(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_vector(&self) -> &Array1<f64> {
        match self {
            Tensor::Vector(v) => v,
            Tensor::Matrix(_) => panic!("tensor is a matrix, expected vector"),
        }
    }

    pub fn as_matrix(&self) -> &Array2<f64> {
        match self {
            Tensor::Matrix(m) => m,
            Tensor::Vector(_) => panic!("tensor is a vector, expected matrix"),
        }
    }

    /// Read entry `i` in row-major flat order.
    pub fn get_flat(&self, i: usize) -> f64 {
        match self {
            Tensor::Vector(v) => v[i],
            Tensor::Matrix(m) => {
                let cols = m.ncols();
                m[(i / cols, i % cols)]
            }
        }
    }

    /// Add `delta` to entry `i` in row-major flat order.
    pub fn add_flat(&mut self, i: usize, delta: f64) {
        match self {
            Tensor::Vector(v) => v[i] += delta,
            Tensor::Matrix(m) => {
                let cols = m.ncols();
                m[(i / cols, i % cols)] += delta;
            }
        }
    }

    /// All entries as one row-major slice.
    pub fn flat(&self) -> &[f64] {
        match self {
            Tensor::Vector(v) => v.as_slice().expect("contiguous vector"),
            Tensor::Matrix(m) => m.as_slice().expect("row-major matrix"),
        }
    }

    /// All entries as one mutable row-major slice.
    pub fn flat_mut(&mut self) -> &mut [f64] {
        match self {
            Tensor::Vector(v) => v.as_slice_mut().expect("contiguous vector"),
            Tensor::Matrix(m) => m.as_slice_mut().expect("row-major matrix"),
        }
    }

    /// Rebuild from a shape (length-1 = vector, length-2 = matrix) and
    /// row-major entries.
    pub fn from_parts(shape: &[usize], data: Vec<f64>) -> Option<Tensor> {
        match *shape {
            [len] if data.len() == len => Some(Tensor::Vector(Array1::from(data))),
            [rows, cols] if data.len() == rows * cols => {
                Array2::from_shape_vec((rows, cols), data).ok().map(Tensor::Matrix)
            }
            _ => None,
        }
    }

    /// Shape as a one- or two-element vector.
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Tensor::Vector(v) => vec![v.len()],
            Tensor::Matrix(m) => vec![m.nrows(), m.ncols()],
        }
    }

    /// Vector with entries drawn uniformly from `[-bound, bound)`.
    pub fn uniform_vec(len: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
        Tensor::Vector(Array1::from_shape_fn(len, |_| {
            rng.gen_range(-bound..bound)
        }))
    }

    /// Matrix with entries drawn uniformly from `[-bound, bound)`.
    pub fn uniform_mat(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
        Tensor::Matrix(Array2::from_shape_fn((rows, cols), |_| {
            rng.gen_range(-bound..bound)
        }))
    }
}

/// Named trainable tensors. Insertion order is stable and canonical, so a
/// store rebuilt from the same construction path always maps names to the
/// same [`ParamId`]s.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under `name`. Panics on a duplicate name: parameter
    /// registration is a construction-time, programmer-controlled path.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.entries.len();
        self.entries.push((name.to_string(), tensor));
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].0
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id].1
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Clone of the store with one flat entry of one tensor offset by `delta`.
    /// Intended for finite-difference checks.
    pub fn clone_with(&self, id: ParamId, flat: usize, delta: f64) -> ParamStore {
        let mut copy = self.clone();
        copy.tensor_mut(id).add_flat(flat, delta);
        copy
    }
}

/// Per-tensor gradients, aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub tensors: Vec<Tensor>,
}

impl Grads {
    pub fn zeros_of(store: &ParamStore) -> Self {
        Grads {
            tensors: store.iter().map(|(_, t)| t.zeros_like()).collect(),
        }
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    /// Euclidean norm over every entry of every tensor.
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for t in &self.tensors {
            match t {
                Tensor::Vector(v) => sq += v.iter().map(|x| x * x).sum::<f64>(),
                Tensor::Matrix(m) => sq += m.iter().map(|x| x * x).sum::<f64>(),
            }
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            match t {
                Tensor::Vector(v) => v.mapv_inplace(|x| x * factor),
                Tensor::Matrix(m) => m.mapv_inplace(|x| x * factor),
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    /// Vector parameter entering the tape.
    Param(ParamId),
    /// `W x` for a matrix parameter `W`.
    MatVec { w: ParamId, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    /// Elementwise affine map; only the slope matters for gradients.
    Affine { x: NodeId, mul: f64 },
    /// Inner product of two equal-length vectors; yields a scalar.
    Dot(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Elementwise `ln(max(x, eps))`; gradient is zero where the clamp binds.
    LogClamped { x: NodeId, eps: f64 },
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize, len: usize },
    /// Scalars gathered into one vector.
    Stack(Vec<NodeId>),
    Softmax(NodeId),
    /// Elementwise max across equal-length inputs; gradient follows the
    /// first argmax per component.
    MaxPool(Vec<NodeId>),
    /// Vector `x` scaled by scalar node `s`.
    ScaleBy { x: NodeId, s: NodeId },
    /// Elementwise sum of equal-length inputs.
    Sum(Vec<NodeId>),
}

struct Node {
    value: Array1<f64>,
    op: Op,
}

/// The tape. Build values with the op methods, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Array1<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Array1<f64> {
        &self.nodes[id].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "node {id} is not a scalar");
        v[0]
    }

    pub fn constant(&mut self, value: Array1<f64>) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn scalar_const(&mut self, x: f64) -> NodeId {
        self.constant(Array1::from_vec(vec![x]))
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.constant(Array1::zeros(len))
    }

    /// Bring a vector parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let v = store.tensor(id).as_vector().clone();
        self.push(v, Op::Param(id))
    }

    /// `W x` where `W` is a matrix parameter.
    pub fn matvec(&mut self, store: &ParamStore, w: ParamId, x: NodeId) -> NodeId {
        let m = store.tensor(w).as_matrix();
        let xv = self.value(x);
        assert_eq!(
            m.ncols(),
            xv.len(),
            "matvec: {} is {}x{} but input has length {}",
            store.name(w),
            m.nrows(),
            m.ncols(),
            xv.len()
        );
        let value = m.dot(xv);
        self.push(value, Op::MatVec { w, x })
    }

    fn assert_same_len(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.value(a).len(),
            self.value(b).len(),
            "{what}: length mismatch"
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_len(a, b, "add");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_len(a, b, "sub");
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_len(a, b, "mul");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let value = self.value(x).mapv(|v| v * mul + add);
        self.push(value, Op::Affine { x, mul })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_len(a, b, "dot");
        let value = self.value(a).dot(self.value(b));
        self.push(Array1::from_vec(vec![value]), Op::Dot(a, b))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(stable_sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn log_clamped(&mut self, x: NodeId, eps: f64) -> NodeId {
        let value = self.value(x).mapv(|v| v.max(eps).ln());
        self.push(value, Op::LogClamped { x, eps })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero nodes");
        let mut out = Vec::new();
        for &p in parts {
            out.extend(self.value(p).iter().copied());
        }
        self.push(Array1::from_vec(out), Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(x);
        assert!(start + len <= v.len(), "slice out of bounds");
        let value = v.slice(ndarray::s![start..start + len]).to_owned();
        self.push(value, Op::Slice { x, start, len })
    }

    /// Gather scalar nodes into one vector node.
    pub fn stack(&mut self, scalars: &[NodeId]) -> NodeId {
        assert!(!scalars.is_empty(), "stack of zero nodes");
        let mut out = Vec::with_capacity(scalars.len());
        for &s in scalars {
            let v = self.value(s);
            assert_eq!(v.len(), 1, "stack expects scalar nodes");
            out.push(v[0]);
        }
        self.push(Array1::from_vec(out), Op::Stack(scalars.to_vec()))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = v.mapv(|e| (e - max).exp());
        let sum: f64 = exps.sum();
        self.push(exps / sum, Op::Softmax(x))
    }

    pub fn max_pool(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "max_pool of zero nodes");
        let len = self.value(parts[0]).len();
        for &p in parts {
            assert_eq!(self.value(p).len(), len, "max_pool: length mismatch");
        }
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            let v = self.value(p);
            for c in 0..len {
                if v[c] > out[c] {
                    out[c] = v[c];
                }
            }
        }
        self.push(out, Op::MaxPool(parts.to_vec()))
    }

    /// Vector node `x` scaled by scalar node `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.value(s).len(), 1, "scale_by expects a scalar factor");
        let factor = self.value(s)[0];
        let value = self.value(x).mapv(|v| v * factor);
        self.push(value, Op::ScaleBy { x, s })
    }

    /// Elementwise sum of equal-length nodes.
    pub fn sum_nodes(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "sum of zero nodes");
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            self.assert_same_len(parts[0], p, "sum");
            out = out + self.value(p);
        }
        self.push(out, Op::Sum(parts.to_vec()))
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean(&mut self, scalars: &[NodeId]) -> NodeId {
        let total = self.sum_nodes(scalars);
        self.affine(total, 1.0 / scalars.len() as f64, 0.0)
    }

    /// Reverse sweep from scalar node `loss`, returning one gradient tensor
    /// per parameter in `store`.
    pub fn backward(&self, store: &ParamStore, loss: NodeId) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward target must be scalar");
        let mut grads = Grads::zeros_of(store);
        let mut node_grads: Vec<Option<Array1<f64>>> = vec![None; loss + 1];
        node_grads[loss] = Some(Array1::from_vec(vec![1.0]));

        fn acc(slot: &mut Option<Array1<f64>>, delta: &Array1<f64>) {
            match slot {
                Some(g) => *g += delta,
                None => *slot = Some(delta.clone()),
            }
        }

        for id in (0..=loss).rev() {
            let Some(g) = node_grads[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Constant => {}
                Op::Param(pid) => match &mut grads.tensors[*pid] {
                    Tensor::Vector(gv) => *gv += &g,
                    Tensor::Matrix(_) => unreachable!("vector param backed by matrix"),
                },
                Op::MatVec { w, x } => {
                    let m = store.tensor(*w).as_matrix();
                    let xv = &self.nodes[*x].value;
                    match &mut grads.tensors[*w] {
                        Tensor::Matrix(gm) => {
                            for r in 0..m.nrows() {
                                for c in 0..m.ncols() {
                                    gm[(r, c)] += g[r] * xv[c];
                                }
                            }
                        }
                        Tensor::Vector(_) => unreachable!("matvec param backed by vector"),
                    }
                    let dx = m.t().dot(&g);
                    acc(&mut node_grads[*x], &dx);
                }
                Op::Add(a, b) => {
                    acc(&mut node_grads[*a], &g);
                    acc(&mut node_grads[*b], &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut node_grads[*a], &g);
                    let neg = g.mapv(|v| -v);
                    acc(&mut node_grads[*b], &neg);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[*b].value;
                    let db = &g * &self.nodes[*a].value;
                    acc(&mut node_grads[*a], &da);
                    acc(&mut node_grads[*b], &db);
                }
                Op::Affine { x, mul } => {
                    let dx = g.mapv(|v| v * mul);
                    acc(&mut node_grads[*x], &dx);
                }
                Op::Dot(a, b) => {
                    let da = self.nodes[*b].value.mapv(|v| v * g[0]);
                    let db = self.nodes[*a].value.mapv(|v| v * g[0]);
                    acc(&mut node_grads[*a], &da);
                    acc(&mut node_grads[*b], &db);
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[id].value;
                    let dx = Array1::from_shape_fn(y.len(), |c| g[c] * y[c] * (1.0 - y[c]));
                    acc(&mut node_grads[*x], &dx);
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[id].value;
                    let dx = Array1::from_shape_fn(y.len(), |c| g[c] * (1.0 - y[c] * y[c]));
                    acc(&mut node_grads[*x], &dx);
                }
                Op::LogClamped { x, eps } => {
                    let xv = &self.nodes[*x].value;
                    let dx = Array1::from_shape_fn(xv.len(), |c| {
                        if xv[c] > *eps {
                            g[c] / xv[c]
                        } else {
                            0.0
                        }
                    });
                    acc(&mut node_grads[*x], &dx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        let dp = g.slice(ndarray::s![offset..offset + len]).to_owned();
                        acc(&mut node_grads[p], &dp);
                        offset += len;
                    }
                }
                Op::Slice { x, start, len } => {
                    let full = self.nodes[*x].value.len();
                    let mut dx = Array1::zeros(full);
                    dx.slice_mut(ndarray::s![*start..*start + *len]).assign(&g);
                    acc(&mut node_grads[*x], &dx);
                }
                Op::Stack(parts) => {
                    for (c, &p) in parts.iter().enumerate() {
                        let dp = Array1::from_vec(vec![g[c]]);
                        acc(&mut node_grads[p], &dp);
                    }
                }
                Op::Softmax(x) => {
                    // dL/dx = y ⊙ (g − (g · y)) for y = softmax(x).
                    let y = &self.nodes[id].value;
                    let gy: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                    let dx = Array1::from_shape_fn(y.len(), |c| y[c] * (g[c] - gy));
                    acc(&mut node_grads[*x], &dx);
                }
                Op::MaxPool(parts) => {
                    let out = &self.nodes[id].value;
                    for c in 0..out.len() {
                        for &p in parts {
                            if self.nodes[p].value[c] == out[c] {
                                match &mut node_grads[p] {
                                    Some(gp) => gp[c] += g[c],
                                    None => {
                                        let mut gp = Array1::zeros(out.len());
                                        gp[c] = g[c];
                                        node_grads[p] = Some(gp);
                                    }
                                }
                                break;
                            }
                        }
                    }
                }
                Op::ScaleBy { x, s } => {
                    let factor = self.nodes[*s].value[0];
                    let dx = g.mapv(|v| v * factor);
                    acc(&mut node_grads[*x], &dx);
                    let ds = g.dot(&self.nodes[*x].value);
                    acc(&mut node_grads[*s], &Array1::from_vec(vec![ds]));
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut node_grads[p], &g);
                    }
                }
            }
        }
        grads
    }
}
