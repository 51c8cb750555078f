//! Define-by-run computation graph with symbolic reverse mode.
//!
//! Every node's value is computed eagerly when the node is created. The
//! backward pass is itself built out of graph ops, so a gradient can be
//! differentiated again; that is what makes meta-gradients through an inner
//! gradient step exact.

use super::tensor::{self, ConvGeometry, Tensor};
use std::cell::{Cell, RefCell};
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op} at node {node}: shape mismatch between node {lhs} {lhs_shape:?} and node {rhs} {rhs_shape:?}")]
    ShapeMismatch {
        op: &'static str,
        node: usize,
        lhs: usize,
        lhs_shape: Vec<usize>,
        rhs: usize,
        rhs_shape: Vec<usize>,
    },
    #[error("{op} at node {node}: invalid operand shape {shape:?}: {reason}")]
    BadShape { op: &'static str, node: usize, shape: Vec<usize>, reason: String },
    #[error("unbound leaf `{0}`")]
    Unbound(String),
    #[error("loss must be a scalar, node {node} has shape {shape:?}")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("step size must be non-negative, got {0}")]
    NegativeStep(f64),
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    AddScalar,
    Recip,
    Exp,
    Rsqrt,
    Tanh,
    Sigmoid,
    Relu,
    Clip(f64, f64),
    MatMul { ta: bool, tb: bool },
    BroadcastRows,
    SumRows,
    BroadcastCols,
    SumCols,
    Sum,
    Expand,
    Reshape,
    Slice { r0: usize, c0: usize },
    Pad { r0: usize, c0: usize },
    ConcatCols,
    Im2col(ConvGeometry),
    Col2im(ConvGeometry),
    BatchTranspose,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Recip => "recip",
            Op::Exp => "exp",
            Op::Rsqrt => "rsqrt",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Clip(..) => "clip",
            Op::MatMul { .. } => "matmul",
            Op::BroadcastRows => "broadcast_rows",
            Op::SumRows => "sum_rows",
            Op::BroadcastCols => "broadcast_cols",
            Op::SumCols => "sum_cols",
            Op::Sum => "sum",
            Op::Expand => "expand",
            Op::Reshape => "reshape",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::ConcatCols => "concat_cols",
            Op::Im2col(_) => "im2col",
            Op::Col2im(_) => "col2im",
            Op::BatchTranspose => "batch_transpose",
        }
    }
}

struct Node {
    op: Op,
    parents: Vec<usize>,
    value: Rc<Tensor>,
}

/// Owns all nodes of one computation. Not `Send`; build one graph per thread.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    record: Cell<bool>,
    fault: Option<&'static str>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), record: Cell::new(true), fault: super::fault::active() }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, parents: Vec<usize>, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let (op, parents) =
            if self.record.get() || matches!(op, Op::Leaf) { (op, parents) } else { (Op::Const, Vec::new()) };
        nodes.push(Node { op, parents, value: Rc::new(value) });
        Var { graph: self, id }
    }

    fn next_id(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// A differentiable leaf (parameter or input).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, Vec::new(), value)
    }

    /// A constant: never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Const, Vec::new(), value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    /// Gradients of scalar `loss` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned gradients are themselves
    /// differentiable; otherwise they are recorded as constants. Any `wrt`
    /// node the loss does not depend on gets an all-zero gradient.
    pub fn grad<'g>(&'g self, loss: Var<'g>, wrt: &[Var<'g>], create_graph: bool) -> Result<Vec<Var<'g>>> {
        let loss_shape = self.shape_of(loss.id);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(GraphError::NonScalarLoss { node: loss.id, shape: loss_shape });
        }
        let n = loss.id + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.id < n {
                needs[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in 0..n {
                if !needs[i] {
                    needs[i] = nodes[i].parents.iter().any(|&p| needs[p]);
                }
            }
        }
        let prev = self.record.replace(create_graph);
        let result = self.backward(loss, n, &needs, wrt);
        self.record.set(prev);
        result
    }

    fn backward<'g>(&'g self, loss: Var<'g>, n: usize, needs: &[bool], wrt: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        let mut adj: Vec<Option<Var<'g>>> = vec![None; n];
        let loss_shape = self.shape_of(loss.id);
        adj[loss.id] = Some(self.constant(Tensor::ones(&loss_shape)));
        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let (op, parents) = {
                let nodes = self.nodes.borrow();
                (nodes[i].op.clone(), nodes[i].parents.clone())
            };
            if parents.is_empty() {
                continue;
            }
            let me = Var { graph: self, id: i };
            let mut grads = self.vjp(&op, &parents, me, g, needs)?;
            if self.fault == Some(op.name()) {
                for gp in grads.iter_mut().flatten() {
                    *gp = gp.neg();
                }
            }
            for (&p, gp) in parents.iter().zip(grads) {
                if let Some(gp) = gp {
                    adj[p] = Some(match adj[p] {
                        Some(acc) => acc.add(gp)?,
                        None => gp,
                    });
                }
            }
        }
        wrt.iter()
            .map(|w| match adj.get(w.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Tensor::zeros(&self.shape_of(w.id)))),
            })
            .collect()
    }

    /// Vector-Jacobian products for one node, expressed as graph ops.
    fn vjp<'g>(
        &'g self,
        op: &Op,
        parents: &[usize],
        me: Var<'g>,
        g: Var<'g>,
        needs: &[bool],
    ) -> Result<Vec<Option<Var<'g>>>> {
        let p = |k: usize| Var { graph: self, id: parents[k] };
        let want = |k: usize| needs[parents[k]];
        let one = |v: Result<Var<'g>>| -> Result<Vec<Option<Var<'g>>>> { Ok(vec![Some(v?)]) };
        match op {
            Op::Leaf | Op::Const => Ok(vec![]),
            Op::Add => Ok(vec![want(0).then_some(g), want(1).then_some(g)]),
            Op::Sub => Ok(vec![want(0).then_some(g), want(1).then(|| g.neg())]),
            Op::Mul => Ok(vec![
                if want(0) { Some(g.mul(p(1))?) } else { None },
                if want(1) { Some(g.mul(p(0))?) } else { None },
            ]),
            Op::Neg => one(Ok(g.neg())),
            Op::Scale(c) => one(Ok(g.scale(*c))),
            Op::AddScalar => Ok(vec![Some(g)]),
            Op::Recip => one(g.mul(me)?.mul(me).map(|v| v.neg())),
            Op::Exp => one(g.mul(me)),
            Op::Rsqrt => one(g.mul(me)?.mul(me)?.mul(me).map(|v| v.scale(-0.5))),
            Op::Tanh => one(g.mul(me.mul(me)?.neg().add_scalar(1.0))),
            Op::Sigmoid => one(g.mul(me)?.mul(me.neg().add_scalar(1.0))),
            Op::Relu => {
                let mask = p(0).value().map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                one(g.mul(self.constant(mask)))
            }
            Op::Clip(lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let mask = p(0).value().map(|x| if x >= lo && x <= hi { 1.0 } else { 0.0 });
                one(g.mul(self.constant(mask)))
            }
            Op::MatMul { ta, tb } => {
                let (a, b) = (p(0), p(1));
                let (ga, gb) = match (ta, tb) {
                    (false, false) => {
                        (want(0).then(|| g.matmul_t(b, false, true)), want(1).then(|| a.matmul_t(g, true, false)))
                    }
                    (false, true) => {
                        (want(0).then(|| g.matmul_t(b, false, false)), want(1).then(|| g.matmul_t(a, true, false)))
                    }
                    (true, false) => {
                        (want(0).then(|| b.matmul_t(g, false, true)), want(1).then(|| a.matmul_t(g, false, false)))
                    }
                    (true, true) => {
                        (want(0).then(|| b.matmul_t(g, true, true)), want(1).then(|| g.matmul_t(a, true, true)))
                    }
                };
                Ok(vec![ga.transpose()?, gb.transpose()?])
            }
            Op::BroadcastRows => one(g.sum_rows()),
            Op::SumRows => one(g.broadcast_rows(p(0).shape()[0])),
            Op::BroadcastCols => one(g.sum_cols()),
            Op::SumCols => one(g.broadcast_cols(p(0).shape()[1])),
            Op::Sum => one(g.expand(&p(0).shape())),
            Op::Expand => one(Ok(g.sum())),
            Op::Reshape => one(g.reshape(&p(0).shape())),
            Op::Slice { r0, c0, .. } => {
                let s = p(0).shape();
                one(g.pad(s[0], s[1], *r0, *c0))
            }
            Op::Pad { r0, c0, .. } => {
                let s = p(0).shape();
                one(g.slice(*r0, *r0 + s[0], *c0, *c0 + s[1]))
            }
            Op::ConcatCols => {
                let rows = g.shape()[0];
                let mut out = Vec::with_capacity(parents.len());
                let mut c = 0;
                for k in 0..parents.len() {
                    let w = p(k).shape()[1];
                    out.push(if want(k) { Some(g.slice(0, rows, c, c + w)?) } else { None });
                    c += w;
                }
                Ok(out)
            }
            Op::Im2col(geo) => one(g.col2im(*geo)),
            Op::Col2im(geo) => one(g.im2col(*geo)),
            Op::BatchTranspose => one(g.batch_transpose()),
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape_of(self.id)
    }

    /// Value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, op: Op, value: Tensor) -> Var<'g> {
        self.graph.push(op, vec![self.id], value)
    }

    fn same_shape(self, other: Var<'g>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(GraphError::ShapeMismatch {
                op,
                node: self.graph.next_id(),
                lhs: self.id,
                lhs_shape: a,
                rhs: other.id,
                rhs_shape: b,
            });
        }
        Ok(())
    }

    fn bad(self, op: &'static str, reason: impl Into<String>) -> GraphError {
        GraphError::BadShape { op, node: self.graph.next_id(), shape: self.shape(), reason: reason.into() }
    }

    fn want_rank(self, op: &'static str, rank: usize) -> Result<Vec<usize>> {
        let s = self.shape();
        if s.len() != rank {
            return Err(self.bad(op, format!("expected rank {rank}")));
        }
        Ok(s)
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_shape(other, "add")?;
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        Ok(self.graph.push(Op::Add, vec![self.id, other.id], v))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_shape(other, "sub")?;
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        Ok(self.graph.push(Op::Sub, vec![self.id, other.id], v))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_shape(other, "mul")?;
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        Ok(self.graph.push(Op::Mul, vec![self.id, other.id], v))
    }

    pub fn neg(self) -> Var<'g> {
        let v = self.value().map(|x| -x);
        self.unary(Op::Neg, v)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let v = self.value().map(|x| x * c);
        self.unary(Op::Scale(c), v)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let v = self.value().map(|x| x + c);
        self.unary(Op::AddScalar, v)
    }

    pub fn recip(self) -> Var<'g> {
        let v = self.value().map(|x| 1.0 / x);
        self.unary(Op::Recip, v)
    }

    pub fn exp(self) -> Var<'g> {
        let v = self.value().map(f64::exp);
        self.unary(Op::Exp, v)
    }

    pub fn rsqrt(self) -> Var<'g> {
        let v = self.value().map(|x| 1.0 / x.sqrt());
        self.unary(Op::Rsqrt, v)
    }

    pub fn tanh(self) -> Var<'g> {
        let v = self.value().map(f64::tanh);
        self.unary(Op::Tanh, v)
    }

    pub fn sigmoid(self) -> Var<'g> {
        let v = self.value().map(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(Op::Sigmoid, v)
    }

    pub fn relu(self) -> Var<'g> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(Op::Relu, v)
    }

    pub fn square(self) -> Var<'g> {
        self.mul(self).expect("same node")
    }

    /// Elementwise clamp to `[lo, hi]`. Its derivative is 1 strictly inside
    /// the interval (and on the boundary) and 0 where the input was clamped.
    pub fn clip(self, lo: f64, hi: f64) -> Result<Var<'g>> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(GraphError::InvalidInterval { lo, hi });
        }
        let v = self.value().map(|x| x.clamp(lo, hi));
        Ok(self.unary(Op::Clip(lo, hi), v))
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` with optional transposes.
    pub fn matmul_t(self, other: Var<'g>, ta: bool, tb: bool) -> Result<Var<'g>> {
        let a = self.want_rank("matmul", 2)?;
        let b = other.want_rank("matmul", 2)?;
        let k1 = if ta { a[0] } else { a[1] };
        let k2 = if tb { b[1] } else { b[0] };
        if k1 != k2 {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                node: self.graph.next_id(),
                lhs: self.id,
                lhs_shape: a,
                rhs: other.id,
                rhs_shape: b,
            });
        }
        let v = tensor::gemm(&self.value(), ta, &other.value(), tb);
        Ok(self.graph.push(Op::MatMul { ta, tb }, vec![self.id, other.id], v))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let s = self.want_rank("transpose", 2)?;
        // a transpose is a reshape-free permutation; route through batch_transpose
        self.reshape(&[1, s[0], s[1]])?.batch_transpose()?.reshape(&[s[1], s[0]])
    }

    /// `[m] -> [n, m]`, repeating the vector as every row.
    pub fn broadcast_rows(self, n: usize) -> Result<Var<'g>> {
        let s = self.want_rank("broadcast_rows", 1)?;
        let v = self.value();
        let mut data = Vec::with_capacity(n * s[0]);
        for _ in 0..n {
            data.extend_from_slice(v.data());
        }
        Ok(self.unary(Op::BroadcastRows, Tensor::new(&[n, s[0]], data)))
    }

    /// `[n, m] -> [m]`, summing over rows.
    pub fn sum_rows(self) -> Result<Var<'g>> {
        let s = self.want_rank("sum_rows", 2)?;
        let v = self.value();
        let mut out = vec![0.0; s[1]];
        for r in 0..s[0] {
            for (o, x) in out.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        Ok(self.unary(Op::SumRows, Tensor::vector(out)))
    }

    /// `[n] -> [n, m]`, repeating each entry across its row.
    pub fn broadcast_cols(self, m: usize) -> Result<Var<'g>> {
        let s = self.want_rank("broadcast_cols", 1)?;
        let v = self.value();
        let data = v.data().iter().flat_map(|&x| std::iter::repeat_n(x, m)).collect();
        Ok(self.unary(Op::BroadcastCols, Tensor::new(&[s[0], m], data)))
    }

    /// `[n, m] -> [n]`, summing each row.
    pub fn sum_cols(self) -> Result<Var<'g>> {
        let s = self.want_rank("sum_cols", 2)?;
        let v = self.value();
        let out = (0..s[0]).map(|r| v.row(r).iter().sum()).collect();
        Ok(self.unary(Op::SumCols, Tensor::vector(out)))
    }

    /// Sum of all entries, as a rank-0 scalar.
    pub fn sum(self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(Op::Sum, v)
    }

    /// Broadcast a one-element node to `shape`.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        if v.len() != 1 {
            return Err(self.bad("expand", "operand must hold a single value"));
        }
        Ok(self.unary(Op::Expand, Tensor::full(shape, v.item())))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        if shape.iter().product::<usize>() != v.len() {
            return Err(self.bad("reshape", format!("cannot reshape to {shape:?}")));
        }
        let t = (*v).clone().reshaped(shape);
        Ok(self.unary(Op::Reshape, t))
    }

    /// Rows `r0..r1`, columns `c0..c1` of a matrix.
    pub fn slice(self, r0: usize, r1: usize, c0: usize, c1: usize) -> Result<Var<'g>> {
        let s = self.want_rank("slice", 2)?;
        if r0 > r1 || r1 > s[0] || c0 > c1 || c1 > s[1] {
            return Err(self.bad("slice", format!("range [{r0}..{r1}, {c0}..{c1}] out of bounds")));
        }
        let v = self.value();
        let mut data = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for r in r0..r1 {
            data.extend_from_slice(&v.row(r)[c0..c1]);
        }
        Ok(self.unary(Op::Slice { r0, c0 }, Tensor::new(&[r1 - r0, c1 - c0], data)))
    }

    /// Embeds a matrix into a zero `[rows, cols]` matrix at offset `(r0, c0)`.
    pub fn pad(self, rows: usize, cols: usize, r0: usize, c0: usize) -> Result<Var<'g>> {
        let s = self.want_rank("pad", 2)?;
        if r0 + s[0] > rows || c0 + s[1] > cols {
            return Err(self.bad("pad", format!("does not fit in [{rows}, {cols}] at ({r0}, {c0})")));
        }
        let v = self.value();
        let mut out = Tensor::zeros(&[rows, cols]);
        for r in 0..s[0] {
            let dst = (r0 + r) * cols + c0;
            out.data_mut()[dst..dst + s[1]].copy_from_slice(v.row(r));
        }
        Ok(self.unary(Op::Pad { r0, c0 }, out))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts.first().expect("concat of nothing");
        let rows = first.want_rank("concat_cols", 2)?[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.want_rank("concat_cols", 2)?;
            if s[0] != rows {
                return Err(GraphError::ShapeMismatch {
                    op: "concat_cols",
                    node: first.graph.next_id(),
                    lhs: first.id,
                    lhs_shape: first.shape(),
                    rhs: p.id,
                    rhs_shape: s,
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row(r));
            }
        }
        let g = first.graph;
        Ok(g.push(Op::ConcatCols, parts.iter().map(|p| p.id).collect(), Tensor::new(&[rows, total], data)))
    }

    pub fn im2col(self, geo: ConvGeometry) -> Result<Var<'g>> {
        let s = self.shape();
        if s != [geo.batch, geo.height, geo.width, geo.channels] {
            return Err(self.bad("im2col", "input does not match convolution geometry"));
        }
        if geo.kernel > geo.height || geo.kernel > geo.width || geo.stride == 0 {
            return Err(self.bad("im2col", "kernel larger than image or zero stride"));
        }
        let v = tensor::im2col(&self.value(), &geo);
        Ok(self.unary(Op::Im2col(geo), v))
    }

    pub fn col2im(self, geo: ConvGeometry) -> Result<Var<'g>> {
        if self.shape() != [geo.patches(), geo.patch_len()] {
            return Err(self.bad("col2im", "columns do not match convolution geometry"));
        }
        let v = tensor::col2im(&self.value(), &geo);
        Ok(self.unary(Op::Col2im(geo), v))
    }

    /// `[B, X, Y] -> [B, Y, X]`.
    pub fn batch_transpose(self) -> Result<Var<'g>> {
        self.want_rank("batch_transpose", 3)?;
        let v = tensor::batch_transpose(&self.value());
        Ok(self.unary(Op::BatchTranspose, v))
    }

    /// Fails if any entry is non-finite.
    pub fn check_finite(self) -> Result<Var<'g>> {
        if self.value().is_finite() {
            Ok(self)
        } else {
            let op = self.graph.nodes.borrow()[self.id].op.name();
            Err(GraphError::NonFinite { op, node: self.id })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_product() {
        let g = Graph::new();
        assert_eq!(g.scalar(7.0).item(), 7.0);
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.leaf(Tensor::scalar(3.0));
        assert_eq!(x.mul(y).unwrap().item(), 6.0);
    }

    #[test]
    fn square_derivative() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let l = x.square();
        let d = g.grad(l, &[x], false).unwrap();
        assert_eq!(d[0].item(), 6.0);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = g.scalar(5.0);
        let d = g.grad(c, &[x], false).unwrap();
        assert_eq!(d[0].value().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.grad(x, &[x], false), Err(GraphError::NonScalarLoss { .. })));
    }

    #[test]
    fn shape_mismatch_names_nodes() {
        let g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2]));
        let b = g.leaf(Tensor::zeros(&[3]));
        match a.add(b) {
            Err(GraphError::ShapeMismatch { lhs, rhs, .. }) => assert_eq!((lhs, rhs), (a.id(), b.id())),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn second_derivative_of_cube() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = x.mul(x).unwrap().mul(x).unwrap();
        let d1 = g.grad(y, &[x], true).unwrap()[0];
        assert_eq!(d1.item(), 12.0);
        let d2 = g.grad(d1, &[x], false).unwrap()[0];
        assert_eq!(d2.item(), 12.0);
    }

    #[test]
    fn first_order_grad_is_not_differentiable() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = x.mul(x).unwrap().mul(x).unwrap();
        let d1 = g.grad(y, &[x], false).unwrap()[0];
        let d2 = g.grad(d1, &[x], false).unwrap()[0];
        assert_eq!(d2.item(), 0.0);
    }

    #[test]
    fn clip_rejects_inverted_interval() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0));
        assert!(x.clip(1.0, -1.0).is_err());
    }
}
