//! Reverse-mode differentiation over a recorded graph of vector operations.
//!
//! Nodes are appended in evaluation order, so walking the node list
//! backwards from the loss is a valid reverse topological order. Every
//! operation checks its output for NaN/Inf and fails instead of recording a
//! poisoned value.

use super::{Array, Gradients, ParamId, ParameterStore, PROB_FLOOR};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    EmbedRow { param: ParamId, row: usize },
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MulConst(NodeId, Vec<f64>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Slice { input: NodeId, start: usize },
    Sum(NodeId),
    Dot(NodeId, NodeId),
    Softmax(NodeId),
    Nll { input: NodeId, target: usize },
    BceMean { input: NodeId, gold: usize },
    MaxPool(Vec<NodeId>),
    MeanPool(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array,
    op: Op,
}

/// Single-use record of one forward computation.
pub struct Tape<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.len() != 1 {
            return Err(Error::shape("scalar", format!("node has shape {:?}", v.shape())));
        }
        Ok(v.data()[0])
    }

    fn push(&mut self, value: Array, op: Op, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn vec_of(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    fn same_len(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<usize> {
        let (la, lb) = (self.vec_of(a).len(), self.vec_of(b).len());
        if la != lb {
            return Err(Error::shape(op, format!("lengths {la} and {lb}")));
        }
        Ok(la)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Array) -> Result<NodeId> {
        self.push(value, Op::Constant, "constant")
    }

    /// Leaf node holding a copy of a parameter. Repeated calls reuse one node.
    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        if let Some(node) = self.param_nodes[id.0] {
            return Ok(node);
        }
        let value = self.store.get(id).clone();
        let node = self.push(value, Op::Param(id), "param")?;
        self.param_nodes[id.0] = Some(node);
        Ok(node)
    }

    /// Row `row` of a rank-2 parameter; gradients scatter back into that row only.
    pub fn embed(&mut self, param: ParamId, row: usize) -> Result<NodeId> {
        let table = self.store.get(param);
        if table.rank() != 2 {
            return Err(Error::shape("embed", format!("table shape {:?}", table.shape())));
        }
        if row >= table.shape()[0] {
            return Err(Error::OutOfRange {
                index: row,
                len: table.shape()[0],
            });
        }
        let value = Array::vector(table.row(row).to_vec());
        self.push(value, Op::EmbedRow { param, row }, "embed")
    }

    /// Matrix-vector product `w · x` for `w` of shape `[m, n]` and `x` of length `n`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let wv = &self.nodes[w.0].value;
        let xv = self.vec_of(x);
        if wv.rank() != 2 || wv.shape()[1] != xv.len() {
            return Err(Error::shape(
                "matvec",
                format!("matrix {:?} against vector of length {}", wv.shape(), xv.len()),
            ));
        }
        let rows = wv.shape()[0];
        let out: Vec<f64> = (0..rows).map(|r| dot(wv.row(r), xv)).collect();
        self.push(Array::vector(out), Op::MatVec(w, x), "matvec")
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        self.same_len(name, a, b)?;
        let out: Vec<f64> = self
            .vec_of(a)
            .iter()
            .zip(self.vec_of(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(Array::new(shape, out)?, op, name)
    }

    fn map(&mut self, name: &'static str, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let src = &self.nodes[a.0].value;
        let out = Array::new(src.shape().to_vec(), src.data().iter().map(|&x| f(x)).collect())?;
        self.push(out, op, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.map("scale", a, Op::Scale(a, factor), |x| x * factor)
    }

    /// Elementwise product with a fixed, non-differentiable vector (dropout masks).
    pub fn mul_const(&mut self, a: NodeId, factors: Vec<f64>) -> Result<NodeId> {
        let src = self.vec_of(a);
        if src.len() != factors.len() {
            return Err(Error::shape(
                "mul_const",
                format!("lengths {} and {}", src.len(), factors.len()),
            ));
        }
        let out: Vec<f64> = src.iter().zip(&factors).map(|(x, m)| x * m).collect();
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push(Array::new(shape, out)?, Op::MulConst(a, factors), "mul_const")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    /// Concatenation of rank-1 nodes.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let total = parts.iter().map(|p| self.vec_of(*p).len()).sum();
        let mut out = Vec::with_capacity(total);
        for p in parts {
            out.extend_from_slice(self.vec_of(*p));
        }
        self.push(Array::vector(out), Op::Concat(parts.to_vec()), "concat")
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let src = self.vec_of(input);
        if start + len > src.len() {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} of length {}", start + len, src.len()),
            ));
        }
        let out = src[start..start + len].to_vec();
        self.push(Array::vector(out), Op::Slice { input, start }, "slice")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.vec_of(a).iter().sum();
        self.push(Array::scalar(s), Op::Sum(a), "sum")
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len("dot", a, b)?;
        let s = dot(self.vec_of(a), self.vec_of(b));
        self.push(Array::scalar(s), Op::Dot(a, b), "dot")
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let out = super::softmax(self.vec_of(a))?;
        self.push(Array::vector(out), Op::Softmax(a), "softmax")
    }

    /// `-ln(max(dist[target], PROB_FLOOR))` as a scalar node.
    pub fn nll(&mut self, input: NodeId, target: usize) -> Result<NodeId> {
        let loss = super::nll(self.vec_of(input), target)?;
        self.push(Array::scalar(loss), Op::Nll { input, target }, "nll")
    }

    /// Mean binary cross-entropy of per-position probabilities against a
    /// one-hot target with its single positive at `gold`.
    pub fn bce_mean(&mut self, input: NodeId, gold: usize) -> Result<NodeId> {
        let loss = bce_mean(self.vec_of(input), gold)?;
        self.push(Array::scalar(loss), Op::BceMean { input, gold }, "bce_mean")
    }

    /// Coordinatewise maximum over equal-length vectors.
    pub fn max_pool(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or(Error::Empty("max_pool"))?;
        let mut out = self.vec_of(first).to_vec();
        for &p in &parts[1..] {
            self.same_len("max_pool", first, p)?;
            for (o, &x) in out.iter_mut().zip(self.vec_of(p)) {
                if x > *o {
                    *o = x;
                }
            }
        }
        self.push(Array::vector(out), Op::MaxPool(parts.to_vec()), "max_pool")
    }

    /// Coordinatewise arithmetic mean over equal-length vectors.
    pub fn mean_pool(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or(Error::Empty("mean_pool"))?;
        let mut out = vec![0.0; self.vec_of(first).len()];
        for &p in parts {
            self.same_len("mean_pool", first, p)?;
            for (o, &x) in out.iter_mut().zip(self.vec_of(p)) {
                *o += x;
            }
        }
        let n = parts.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        self.push(Array::vector(out), Op::MeanPool(parts.to_vec()), "mean_pool")
    }

    /// Gradient of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self.store);
        self.backward_into(loss, &mut grads, 1.0)?;
        Ok(grads)
    }

    /// Adds `scale * ∂loss/∂p` into `grads` for every parameter `p`.
    pub fn backward_into(&self, loss: NodeId, grads: &mut Gradients, scale: f64) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}", self.value(loss).shape()),
            ));
        }
        if grads.len() != self.store.len() {
            return Err(Error::shape(
                "backward",
                format!("{} gradient slots for {} parameters", grads.len(), self.store.len()),
            ));
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        adj[loss.0] = vec![scale];

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            let out = node.value.data();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    axpy(grads.get_mut(*id).data_mut(), 1.0, &g);
                }
                Op::EmbedRow { param, row } => {
                    axpy(grads.get_mut(*param).row_mut(*row), 1.0, &g);
                }
                Op::MatVec(w, x) => {
                    let (wv, xv) = (&self.nodes[w.0].value, self.vec_of(*x));
                    let cols = xv.len();
                    if needs_grad(&self.nodes[w.0].op) {
                        let dw = slot(&mut adj, *w, wv.len());
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                axpy(&mut dw[r * cols..(r + 1) * cols], gr, xv);
                            }
                        }
                    }
                    if needs_grad(&self.nodes[x.0].op) {
                        let dx = slot(&mut adj, *x, cols);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                axpy(dx, gr, wv.row(r));
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, 1.0, &g);
                    accumulate(&mut adj, *b, 1.0, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, 1.0, &g);
                    accumulate(&mut adj, *b, -1.0, &g);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g.iter().zip(self.vec_of(*b)).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.vec_of(*a)).map(|(g, x)| g * x).collect();
                    accumulate(&mut adj, *a, 1.0, &da);
                    accumulate(&mut adj, *b, 1.0, &db);
                }
                Op::Scale(a, f) => accumulate(&mut adj, *a, *f, &g),
                Op::MulConst(a, factors) => {
                    let da: Vec<f64> = g.iter().zip(factors).map(|(g, m)| g * m).collect();
                    accumulate(&mut adj, *a, 1.0, &da);
                }
                Op::Sigmoid(a) => {
                    let da: Vec<f64> = g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut adj, *a, 1.0, &da);
                }
                Op::Tanh(a) => {
                    let da: Vec<f64> = g.iter().zip(out).map(|(g, t)| g * (1.0 - t * t)).collect();
                    accumulate(&mut adj, *a, 1.0, &da);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.vec_of(*p).len();
                        accumulate(&mut adj, *p, 1.0, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice { input, start } => {
                    let n = self.vec_of(*input).len();
                    let d = slot(&mut adj, *input, n);
                    axpy(&mut d[*start..*start + g.len()], 1.0, &g);
                }
                Op::Sum(a) => {
                    let n = self.vec_of(*a).len();
                    let d = slot(&mut adj, *a, n);
                    d.iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.vec_of(*a), self.vec_of(*b));
                    accumulate(&mut adj, *a, g[0], bv);
                    accumulate(&mut adj, *b, g[0], av);
                }
                Op::Softmax(a) => {
                    let gy = dot(&g, out);
                    let da: Vec<f64> = g.iter().zip(out).map(|(g, y)| y * (g - gy)).collect();
                    accumulate(&mut adj, *a, 1.0, &da);
                }
                Op::Nll { input, target } => {
                    let dist = self.vec_of(*input);
                    let d = slot(&mut adj, *input, dist.len());
                    let p = dist[*target];
                    if p > PROB_FLOOR {
                        d[*target] -= g[0] / p;
                    }
                }
                Op::BceMean { input, gold } => {
                    let probs = self.vec_of(*input);
                    let n = probs.len() as f64;
                    let d = slot(&mut adj, *input, probs.len());
                    for (j, &p) in probs.iter().enumerate() {
                        if j == *gold {
                            if p > PROB_FLOOR {
                                d[j] -= g[0] / (n * p);
                            }
                        } else if 1.0 - p > PROB_FLOOR {
                            d[j] += g[0] / (n * (1.0 - p));
                        }
                    }
                }
                Op::MaxPool(parts) => {
                    // gradient goes to the first part attaining the maximum
                    for (k, &m) in out.iter().enumerate() {
                        let winner = parts
                            .iter()
                            .find(|p| self.vec_of(**p)[k] == m)
                            .copied()
                            .expect("max is attained");
                        let n = self.vec_of(winner).len();
                        slot(&mut adj, winner, n)[k] += g[k];
                    }
                }
                Op::MeanPool(parts) => {
                    let f = 1.0 / parts.len() as f64;
                    for p in parts {
                        accumulate(&mut adj, *p, f, &g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn needs_grad(op: &Op) -> bool {
    !matches!(op, Op::Constant)
}

fn slot(adj: &mut [Vec<f64>], id: NodeId, len: usize) -> &mut Vec<f64> {
    let s = &mut adj[id.0];
    if s.is_empty() {
        s.resize(len, 0.0);
    }
    s
}

fn accumulate(adj: &mut [Vec<f64>], id: NodeId, factor: f64, g: &[f64]) {
    let s = slot(adj, id, g.len());
    axpy(s, factor, g);
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorise the reduction
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bce_mean(probs: &[f64], gold: usize) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("bce_mean"));
    }
    if gold >= probs.len() {
        return Err(Error::OutOfRange {
            index: gold,
            len: probs.len(),
        });
    }
    let total: f64 = probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            if j == gold {
                -p.max(PROB_FLOOR).ln()
            } else {
                -(1.0 - p).max(PROB_FLOOR).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}
