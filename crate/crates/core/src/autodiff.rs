//! Define-by-run reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] records every operation in creation order; [`Graph::backward`]
//! walks the nodes in exact reverse order and accumulates gradients. Values
//! are row-major `rows x cols` [`Tensor`]s. Broadcasting is limited to adding
//! a `1 x cols` bias row.
//!
//! Parameters live outside the graph in a [`ParamSet`]; a graph pulls them in
//! with [`Graph::param`] and hands back one gradient tensor per parameter.

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c += a * b` with `a: m x k`, `b: k x n`.
fn gemm_nn(a: &Tensor, b: &Tensor, c: &mut Tensor) {
    let (m, k) = a.shape();
    let n = b.cols;
    for i in 0..m {
        let crow = &mut c.data[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a * b^T` with `a: m x k`, `b: n x k`.
fn gemm_nt(a: &Tensor, b: &Tensor, c: &mut Tensor) {
    let (m, k) = a.shape();
    let n = b.rows;
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c.data[i * n + j] += s;
        }
    }
}

/// `c += a^T * b` with `a: m x k`, `b: m x n`.
fn gemm_tn(a: &Tensor, b: &Tensor, c: &mut Tensor) {
    let (m, k) = a.shape();
    let n = b.cols;
    for i in 0..m {
        let brow = &b.data[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c.data[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max(x, 0) + ln(1 + e^{-|x|})`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Index of a node in its graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Index of a parameter in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    ClampMin(NodeId, f64),
    Sum(NodeId),
    RowSum(NodeId),
    SegmentSum(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A named, shaped parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Ordered collection of parameters; the order is the serialization order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Concatenates every value in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::Shape {
                op: "assign_flat",
                left: (self.num_values(), 1),
                right: (flat.len(), 1),
            });
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect()
    }
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    node_grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    /// Gradient with respect to `node`, or `None` if the loss does not depend on it.
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.node_grads.get(node.0).and_then(|g| g.as_ref())
    }

    /// One tensor per parameter of `store` (zeros for parameters the graph never used).
    pub fn param_grads(&self, store: &ParamSet) -> Vec<Tensor> {
        let mut out = store.zeros_like();
        for &(pid, node) in &self.params {
            if let Some(g) = self.wrt(node) {
                out[pid.0].add_assign(g);
            }
        }
        out
    }
}

/// A computation graph built during a forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, NodeId)>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Brings a parameter into the graph; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamSet, id: ParamId) -> NodeId {
        if let Some(&(_, node)) = self.params.iter().find(|(p, _)| *p == id) {
            return node;
        }
        let node = self.input(store.get(id).clone());
        self.params.push((id, node));
        node
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            rows: va.rows,
            cols: va.cols,
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(Error::Shape {
                op: "add_row_bias",
                left: sa,
                right: sb,
            });
        }
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[bias.0].value;
        let mut value = va.clone();
        for r in 0..sa.0 {
            for (x, b) in value.data[r * sa.1..(r + 1) * sa.1].iter_mut().zip(&vb.data) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddRowBias(a, bias), rg))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let mut value = Tensor::zeros(sa.0, sb.1);
        gemm_nn(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut value);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: sa,
                right: sb,
            });
        }
        let mut value = Tensor::zeros(sa.0, sb.0);
        gemm_nt(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut value);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMulNT(a, b), rg))
    }

    /// `x W^T + b` for a batch of row inputs `x: n x in`, `W: out x in`, `b: 1 x out`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul_nt(x, w)?;
        self.add_row_bias(y, b)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// `max(a, floor)`; the gradient is zero wherever the floor is active.
    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> NodeId {
        self.unary(a, Op::ClampMin(a, floor), |x| x.max(floor))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.data.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].value.len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums: `n x c -> n x 1`.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let data = (0..v.rows).map(|r| v.row_slice(r).iter().sum()).collect();
        let value = Tensor {
            rows: v.rows,
            cols: 1,
            data,
        };
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// Sums consecutive groups of `group` rows: `(n * group) x c -> n x c`.
    pub fn segment_sum(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if group == 0 || rows % group != 0 {
            return Err(Error::Shape {
                op: "segment_sum",
                left: (rows, cols),
                right: (group, 1),
            });
        }
        let v = &self.nodes[a.0].value;
        let n = rows / group;
        let mut value = Tensor::zeros(n, cols);
        for r in 0..rows {
            let out = r / group;
            for c in 0..cols {
                value.data[out * cols + c] += v.data[r * cols + c];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::SegmentSum(a, group), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            for r in 0..rows {
                value.data[r * cols + off..r * cols + off + v.cols].copy_from_slice(v.row_slice(r));
            }
            off += v.cols;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        let value = Tensor {
            rows: data.len() / cols.max(1),
            cols,
            data,
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                left: (rows, cols),
                right: (start, start + len),
            });
        }
        let v = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&v.row_slice(r)[start..start + len]);
        }
        let value = Tensor { rows, cols: len, data };
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if start + len > rows {
            return Err(Error::Shape {
                op: "slice_rows",
                left: (rows, cols),
                right: (start, start + len),
            });
        }
        let v = &self.nodes[a.0].value;
        let value = Tensor {
            rows: len,
            cols,
            data: v.data[start * cols..(start + len) * cols].to_vec(),
        };
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    /// Row `i` of the output is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: (rows, cols),
                right: (bad, 0),
            });
        }
        let v = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            data.extend_from_slice(v.row_slice(i));
        }
        let value = Tensor {
            rows: indices.len(),
            cols,
            data,
        };
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows(a, indices), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                left: shape,
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            node_grads: grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.rg(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn elementwise(&self, a: NodeId, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.val(a);
        Tensor {
            rows: g.rows,
            cols: g.cols,
            data: g.data.iter().zip(&va.data).map(|(&gv, &x)| f(gv, x)).collect(),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = self.elementwise(*b, g, |gv, y| gv * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.elementwise(*a, g, |gv, x| gv * x);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (acc, v) in gb.data.iter_mut().zip(g.row_slice(r)) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(va.rows, va.cols);
                    gemm_nt(g, vb, &mut ga);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(vb.rows, vb.cols);
                    gemm_tn(va, g, &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(va.rows, va.cols);
                    gemm_nn(g, vb, &mut ga);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(vb.rows, vb.cols);
                    gemm_tn(g, va, &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| c * x));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Softplus(a) => {
                let ga = self.elementwise(*a, g, |gv, x| gv * sigmoid(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = self.elementwise(*a, g, |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(_) | Op::Sigmoid(_) | Op::Exp(_) => {
                let (a, d): (NodeId, fn(f64) -> f64) = match node.op {
                    Op::Tanh(a) => (a, |y| 1.0 - y * y),
                    Op::Sigmoid(a) => (a, |y| y * (1.0 - y)),
                    Op::Exp(a) => (a, |y| y),
                    _ => unreachable!(),
                };
                // derivative expressed through the output value
                let ga = Tensor {
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().zip(&node.value.data).map(|(&gv, &y)| gv * d(y)).collect(),
                };
                self.accumulate(grads, a, ga);
            }
            Op::Log(a) => {
                let ga = self.elementwise(*a, g, |gv, x| gv / x);
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let ga = self.elementwise(*a, g, |gv, x| 2.0 * x * gv);
                self.accumulate(grads, *a, ga);
            }
            Op::ClampMin(a, floor) => {
                let floor = *floor;
                let ga = self.elementwise(*a, g, |gv, x| if x > floor { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::RowSum(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.data[i * c..(i + 1) * c].fill(g.data[i]);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentSum(a, group) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    let out = i / group;
                    ga.data[i * c..(i + 1) * c].copy_from_slice(g.row_slice(out));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.rg(p) {
                        let mut gp = Tensor::zeros(r, c);
                        for i in 0..r {
                            gp.data[i * c..(i + 1) * c].copy_from_slice(&g.row_slice(i)[off..off + c]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.rg(p) {
                        let gp = Tensor {
                            rows: r,
                            cols: c,
                            data: g.data[off..off + r * c].to_vec(),
                        };
                        self.accumulate(grads, p, gp);
                    }
                    off += r * c;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.data[i * c + start..i * c + start + g.cols].copy_from_slice(g.row_slice(i));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                ga.data[start * c..start * c + g.data.len()].copy_from_slice(&g.data);
                self.accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (out, &src) in indices.iter().enumerate() {
                    for (acc, v) in ga.data[src * c..(src + 1) * c].iter_mut().zip(g.row_slice(out)) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    let mut xs = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + eps;
        let fp = f(&xs)?;
        xs[i] = orig - eps;
        let fm = f(&xs)?;
        xs[i] = orig;
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::Numeric(format!("non-finite function value at coordinate {i}")));
        }
        out.push((fp - fm) / (2.0 * eps));
    }
    Ok(out)
}

/// `max_i |a_i - n_i| / max(1e-8, |n_i|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1e-8))
        .fold(0.0, f64::max)
}

/// Compares reverse-mode and central-difference gradients of a scalar function.
///
/// `f` builds the scalar output from a differentiable leaf holding `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let leaf = g.input(x.clone());
    let out = f(&mut g, leaf)?;
    if !g.value(out).is_finite() {
        return Err(Error::Numeric("non-finite function value".into()));
    }
    let grads = g.backward(out)?;
    let analytic = grads
        .wrt(leaf)
        .map_or_else(|| vec![0.0; x.len()], |t| t.data().to_vec());
    let numeric = numeric_gradient(
        |xs| {
            let mut g = Graph::new();
            let leaf = g.input(Tensor::from_vec(x.rows(), x.cols(), xs.to_vec())?);
            let out = f(&mut g, leaf)?;
            Ok(g.value(out).item())
        },
        x.data(),
        eps,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}
