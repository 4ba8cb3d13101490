use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{gemm, Tensor};
use super::TensorError;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    AddExpand(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, end: usize },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Scale(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Mean { x: Var, axis: usize },
    Reshape { x: Var, shape: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    Dropout { x: Var, mask: Tensor },
    WeightedSum(Var, Var),
    Gather { x: Var, ids: Vec<usize> },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::AddExpand(..) => "add_expand",
            Op::Mul(..) => "mul",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Log(..) => "log",
            Op::Scale(..) => "scale",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Mean { .. } => "mean",
            Op::Reshape { .. } => "reshape",
            Op::Embedding { .. } => "embedding",
            Op::Dropout { .. } => "dropout",
            Op::WeightedSum(..) => "weighted_sum",
            Op::Gather { .. } => "gather",
            Op::Sum(..) => "sum",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddBias(a, b)
            | Op::AddExpand(a, b)
            | Op::Mul(a, b)
            | Op::WeightedSum(a, b) => vec![*a, *b],
            Op::Concat(xs) => xs.clone(),
            Op::Slice { x, .. }
            | Op::Mean { x, .. }
            | Op::Reshape { x, .. }
            | Op::Dropout { x, .. }
            | Op::Gather { x, .. } => vec![*x],
            Op::Embedding { table, .. } => vec![*table],
            Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Log(x)
            | Op::Scale(x, _)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Sum(x) => vec![*x],
        }
    }
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Node<'p> {
    op: Op,
    value: Value<'p>,
    needs_grad: bool,
}

/// Reverse-mode tape. Every primitive applied through the graph is recorded
/// in topological order together with its forward value.
///
/// Parameters can be borrowed (`'p`) so inference passes do not copy weights.
pub struct Graph<'p> {
    id: u64,
    nodes: Vec<Node<'p>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Value<'p>, needs_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    /// Trainable leaf borrowed from the caller.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.leaf(Value::Borrowed(t), true)
    }

    /// Trainable leaf owned by the graph.
    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.leaf(Value::Owned(t), true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(Value::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'p Tensor) -> Var {
        self.leaf(Value::Borrowed(t), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.index].value.get()
    }

    /// Forward values of every recorded node, in recording order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| n.value.get())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn check(&self, v: Var) -> Result<(), TensorError> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::UnknownNode { index: v.index });
        }
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<Var, TensorError> {
        let inputs = op.inputs();
        for &v in &inputs {
            self.check(v)?;
        }
        let value = eval_op(&op, |v| self.nodes[v.index].value.get())?;
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.index].needs_grad);
        Ok(self.leaf_with(op, value, needs_grad))
    }

    fn leaf_with(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            needs_grad,
        });
        Var {
            graph: self.id,
            index,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.push(Op::MatMul(a, b))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.push(Op::Add(a, b))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s (bias broadcast).
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.push(Op::AddBias(a, b))
    }

    /// `a[b, n, :] + b[b, :]` for `a: [B, N, D]`, `b: [B, D]`.
    pub fn add_expand(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.push(Op::AddExpand(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.push(Op::Mul(a, b))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        self.push(Op::Concat(xs.to_vec()))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        self.push(Op::Slice { x, start, end })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::Log(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.push(Op::Scale(x, c))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::Softmax(x))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::LogSoftmax(x))
    }

    /// Mean over a single axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.push(Op::Mean { x, axis })
    }

    /// Mean over several axes, applied from the highest axis down.
    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let mut sorted = axes.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        sorted.dedup();
        let mut out = x;
        for axis in sorted {
            out = self.mean_axis(out, axis)?;
        }
        Ok(out)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.push(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    /// Row lookup `table[ids[i]]`, producing `[ids.len(), E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        self.push(Op::Embedding {
            table,
            ids: ids.to_vec(),
        })
    }

    /// Multiplies by a caller-supplied (already rescaled) mask.
    pub fn dropout(&mut self, x: Var, mask: Tensor) -> Result<Var, TensorError> {
        self.push(Op::Dropout { x, mask })
    }

    /// `out[b, :] = Σ_n w[b, n] · v[b, n, :]`.
    pub fn weighted_sum(&mut self, w: Var, v: Var) -> Result<Var, TensorError> {
        self.push(Op::WeightedSum(w, v))
    }

    /// `out[b] = x[b, ids[b]]`.
    pub fn gather(&mut self, x: Var, ids: &[usize]) -> Result<Var, TensorError> {
        self.push(Op::Gather {
            x,
            ids: ids.to_vec(),
        })
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::Sum(x))
    }

    /// Recomputes every non-leaf node from the recorded ops and the stored
    /// leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>, TensorError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.get().clone(),
                ref op => eval_op(op, |v| &values[v.index])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse sweep from a scalar `loss`. Nodes are visited once each, in
    /// reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        self.check(loss)?;
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(Tensor::full(lv.shape(), 1.0));
        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { graph: self.id, grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.index].needs_grad
    }

    fn backprop_node(&self, node: &Node<'p>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = node.value.get();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, bv.data(), true, &mut da, false);
                    accumulate(grads, *a, av.shape(), da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, gd, false, &mut db, false);
                    accumulate(grads, *b, bv.shape(), db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(grads, v, out.shape(), gd.to_vec());
                    }
                }
            }
            Op::AddBias(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, out.shape(), gd.to_vec());
                }
                if self.needs(*b) {
                    let bv = self.value(*b);
                    let w = bv.len();
                    let mut db = vec![0.0; w];
                    for chunk in gd.chunks(w) {
                        for (d, x) in db.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    accumulate(grads, *b, bv.shape(), db);
                }
            }
            Op::AddExpand(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, out.shape(), gd.to_vec());
                }
                if self.needs(*b) {
                    let s = out.shape();
                    let (bn, n, d) = (s[0], s[1], s[2]);
                    let mut db = vec![0.0; bn * d];
                    for bi in 0..bn {
                        let dst = &mut db[bi * d..(bi + 1) * d];
                        for ni in 0..n {
                            let src = &gd[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                            for (x, y) in dst.iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                    }
                    accumulate(grads, *b, self.value(*b).shape(), db);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let da = gd.iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    accumulate(grads, *a, av.shape(), da);
                }
                if self.needs(*b) {
                    let db = gd.iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    accumulate(grads, *b, bv.shape(), db);
                }
            }
            Op::Concat(xs) => {
                let total = out.last_dim();
                let rows = out.rows();
                let mut offset = 0;
                for &x in xs {
                    let xv = self.value(x);
                    let w = xv.last_dim();
                    if self.needs(x) {
                        let mut dx = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dx.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, x, xv.shape(), dx);
                    }
                    offset += w;
                }
            }
            Op::Slice { x, start, end } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let total = xv.last_dim();
                    let w = end - start;
                    let mut dx = vec![0.0; xv.len()];
                    for r in 0..xv.rows() {
                        dx[r * total + start..r * total + end]
                            .copy_from_slice(&gd[r * w..(r + 1) * w]);
                    }
                    accumulate(grads, *x, xv.shape(), dx);
                }
            }
            Op::Tanh(x) => {
                let dx = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                accumulate(grads, *x, out.shape(), dx);
            }
            Op::Sigmoid(x) => {
                let dx = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                accumulate(grads, *x, out.shape(), dx);
            }
            Op::Relu(x) => {
                let dx = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, out.shape(), dx);
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                let dx = gd.iter().zip(xv.data()).map(|(g, v)| g / v).collect();
                accumulate(grads, *x, out.shape(), dx);
            }
            Op::Scale(x, c) => {
                let dx = gd.iter().map(|g| g * c).collect();
                accumulate(grads, *x, out.shape(), dx);
            }
            Op::Softmax(x) => {
                let w = out.last_dim();
                let mut dx = vec![0.0; out.len()];
                for ((dr, gr), yr) in dx
                    .chunks_mut(w)
                    .zip(gd.chunks(w))
                    .zip(out.data().chunks(w))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = y * (g - dot);
                    }
                }
                accumulate(grads, *x, out.shape(), dx);
            }
            Op::LogSoftmax(x) => {
                let w = out.last_dim();
                let mut dx = vec![0.0; out.len()];
                for ((dr, gr), yr) in dx
                    .chunks_mut(w)
                    .zip(gd.chunks(w))
                    .zip(out.data().chunks(w))
                {
                    let gsum: f64 = gr.iter().sum();
                    for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = g - y.exp() * gsum;
                    }
                }
                accumulate(grads, *x, out.shape(), dx);
            }
            Op::Mean { x, axis } => {
                let xv = self.value(*x);
                let (outer, n, inner) = split_axis(xv.shape(), *axis);
                let inv = 1.0 / n as f64;
                let mut dx = vec![0.0; xv.len()];
                for o in 0..outer {
                    for j in 0..n {
                        let dst = &mut dx[(o * n + j) * inner..(o * n + j + 1) * inner];
                        let src = &gd[o * inner..(o + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::Reshape { x, .. } => {
                let xv = self.value(*x);
                accumulate(grads, *x, xv.shape(), gd.to_vec());
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let e = tv.last_dim();
                let mut dt = vec![0.0; tv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut dt[id * e..(id + 1) * e];
                    for (d, s) in dst.iter_mut().zip(&gd[r * e..(r + 1) * e]) {
                        *d += s;
                    }
                }
                accumulate(grads, *table, tv.shape(), dt);
            }
            Op::Dropout { x, mask } => {
                let dx = gd.iter().zip(mask.data()).map(|(g, m)| g * m).collect();
                accumulate(grads, *x, out.shape(), dx);
            }
            Op::WeightedSum(w, v) => {
                let (wv, vv) = (self.value(*w), self.value(*v));
                let s = vv.shape();
                let (bn, n, d) = (s[0], s[1], s[2]);
                if self.needs(*w) {
                    let mut dw = vec![0.0; bn * n];
                    for bi in 0..bn {
                        let gr = &gd[bi * d..(bi + 1) * d];
                        for ni in 0..n {
                            let vr = &vv.data()[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                            dw[bi * n + ni] = gr.iter().zip(vr).map(|(a, b)| a * b).sum();
                        }
                    }
                    accumulate(grads, *w, wv.shape(), dw);
                }
                if self.needs(*v) {
                    let mut dv = vec![0.0; vv.len()];
                    for bi in 0..bn {
                        let gr = &gd[bi * d..(bi + 1) * d];
                        for ni in 0..n {
                            let a = wv.data()[bi * n + ni];
                            let dst = &mut dv[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                            for (x, g) in dst.iter_mut().zip(gr) {
                                *x = a * g;
                            }
                        }
                    }
                    accumulate(grads, *v, vv.shape(), dv);
                }
            }
            Op::Gather { x, ids } => {
                let xv = self.value(*x);
                let w = xv.last_dim();
                let mut dx = vec![0.0; xv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    dx[r * w + id] = gd[r];
                }
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, xv.shape(), vec![gd[0]; xv.len()]);
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled with `like`'s shape when absent.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        if v.graph == self.graph {
            if let Some(g) = self.grads.get_mut(v.index).and_then(|g| g.take()) {
                return g;
            }
        }
        Tensor::zeros(like.shape())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[v.index] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), delta)),
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn eval_op<'a>(op: &Op, get: impl Fn(Var) -> &'a Tensor) -> Result<Tensor, TensorError> {
    let name = op.name();
    Ok(match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(name, &[a.shape(), b.shape()]));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut c, false);
            Tensor::from_parts(vec![m, n], c)
        }
        Op::Add(a, b) | Op::Mul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if a.shape() != b.shape() {
                return Err(mismatch(name, &[a.shape(), b.shape()]));
            }
            let data = if matches!(op, Op::Add(..)) {
                a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()
            } else {
                a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect()
            };
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Op::AddBias(a, b) => {
            let (a, b) = (get(*a), get(*b));
            let (sa, sb) = (a.shape(), b.shape());
            if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
                return Err(mismatch(name, &[sa, sb]));
            }
            let w = b.len();
            let mut data = a.data().to_vec();
            for chunk in data.chunks_mut(w) {
                for (x, y) in chunk.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            Tensor::from_parts(sa.to_vec(), data)
        }
        Op::AddExpand(a, b) => {
            let (a, b) = (get(*a), get(*b));
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 3 || sb.len() != 2 || sa[0] != sb[0] || sa[2] != sb[1] {
                return Err(mismatch(name, &[sa, sb]));
            }
            let (bn, n, d) = (sa[0], sa[1], sa[2]);
            let mut data = a.data().to_vec();
            for bi in 0..bn {
                let src = &b.data()[bi * d..(bi + 1) * d];
                for ni in 0..n {
                    let dst = &mut data[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                    for (x, y) in dst.iter_mut().zip(src) {
                        *x += y;
                    }
                }
            }
            Tensor::from_parts(sa.to_vec(), data)
        }
        Op::Concat(xs) => {
            if xs.is_empty() {
                return Err(mismatch(name, &[]));
            }
            let parts: Vec<&Tensor> = xs.iter().map(|&v| get(v)).collect();
            let lead = &parts[0].shape()[..parts[0].shape().len().saturating_sub(1)];
            if parts[0].shape().is_empty()
                || parts
                    .iter()
                    .any(|p| p.shape().is_empty() || p.shape()[..p.shape().len() - 1] != *lead)
            {
                let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape()).collect();
                return Err(mismatch(name, &shapes));
            }
            let rows = parts[0].rows();
            let total: usize = parts.iter().map(|p| p.last_dim()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in &parts {
                    data.extend_from_slice(p.row(r));
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::from_parts(shape, data)
        }
        Op::Slice { x, start, end } => {
            let x = get(*x);
            if x.shape().is_empty() || start >= end || *end > x.last_dim() {
                return Err(mismatch(name, &[x.shape(), &[*start, *end]]));
            }
            let w = end - start;
            let mut data = Vec::with_capacity(x.rows() * w);
            for r in 0..x.rows() {
                data.extend_from_slice(&x.row(r)[*start..*end]);
            }
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = w;
            Tensor::from_parts(shape, data)
        }
        Op::Tanh(x) => map(get(*x), f64::tanh),
        Op::Sigmoid(x) => map(get(*x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        }),
        Op::Relu(x) => map(get(*x), |v| v.max(0.0)),
        Op::Log(x) => map(get(*x), f64::ln),
        Op::Scale(x, c) => map(get(*x), |v| v * c),
        Op::Softmax(x) | Op::LogSoftmax(x) => {
            let x = get(*x);
            if x.shape().is_empty() {
                return Err(mismatch(name, &[x.shape()]));
            }
            let log = matches!(op, Op::LogSoftmax(..));
            let w = x.last_dim();
            let mut data = Vec::with_capacity(x.len());
            for r in x.data().chunks(w) {
                let row = if log { log_softmax_row(r) } else { softmax_row(r) };
                data.extend(row);
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        }
        Op::Mean { x, axis } => {
            let x = get(*x);
            if *axis >= x.shape().len() {
                return Err(mismatch(name, &[x.shape(), &[*axis]]));
            }
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                let dst = &mut data[o * inner..(o + 1) * inner];
                for j in 0..n {
                    let src = &x.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                for d in dst.iter_mut() {
                    *d /= n as f64;
                }
            }
            let mut shape = x.shape().to_vec();
            shape.remove(*axis);
            Tensor::from_parts(shape, data)
        }
        Op::Reshape { x, shape } => {
            let x = get(*x);
            x.clone().reshaped(shape.clone())?
        }
        Op::Embedding { table, ids } => {
            let t = get(*table);
            if t.shape().len() != 2 || ids.is_empty() {
                return Err(mismatch(name, &[t.shape(), &[ids.len()]]));
            }
            let (v, e) = (t.shape()[0], t.shape()[1]);
            let mut data = Vec::with_capacity(ids.len() * e);
            for &id in ids {
                if id >= v {
                    return Err(TensorError::IndexOutOfRange {
                        op: name,
                        index: id,
                        bound: v,
                    });
                }
                data.extend_from_slice(t.row(id));
            }
            Tensor::from_parts(vec![ids.len(), e], data)
        }
        Op::Dropout { x, mask } => {
            let x = get(*x);
            if x.shape() != mask.shape() {
                return Err(mismatch(name, &[x.shape(), mask.shape()]));
            }
            let data = x.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        }
        Op::WeightedSum(w, v) => {
            let (w, v) = (get(*w), get(*v));
            let (sw, sv) = (w.shape(), v.shape());
            if sw.len() != 2 || sv.len() != 3 || sw[0] != sv[0] || sw[1] != sv[1] {
                return Err(mismatch(name, &[sw, sv]));
            }
            let (bn, n, d) = (sv[0], sv[1], sv[2]);
            let mut data = vec![0.0; bn * d];
            for bi in 0..bn {
                let dst = &mut data[bi * d..(bi + 1) * d];
                for ni in 0..n {
                    let a = w.data()[bi * n + ni];
                    let src = &v.data()[(bi * n + ni) * d..(bi * n + ni + 1) * d];
                    for (x, y) in dst.iter_mut().zip(src) {
                        *x += a * y;
                    }
                }
            }
            Tensor::from_parts(vec![bn, d], data)
        }
        Op::Gather { x, ids } => {
            let x = get(*x);
            if x.shape().len() != 2 || x.shape()[0] != ids.len() {
                return Err(mismatch(name, &[x.shape(), &[ids.len()]]));
            }
            let w = x.shape()[1];
            let mut data = Vec::with_capacity(ids.len());
            for (r, &id) in ids.iter().enumerate() {
                if id >= w {
                    return Err(TensorError::IndexOutOfRange {
                        op: name,
                        index: id,
                        bound: w,
                    });
                }
                data.push(x.data()[r * w + id]);
            }
            Tensor::from_parts(vec![ids.len()], data)
        }
        Op::Sum(x) => Tensor::scalar(get(*x).sum()),
    })
}

/// Max-subtracted softmax of one row.
pub fn softmax_row(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_softmax_row(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}
