//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every executed operation in creation order, which is
//! already a topological order (operands must exist before the result).
//! Calling [`Graph::backward`] on a scalar terminal replays the tape in
//! reverse and accumulates gradients into every node.
//!
//! The op set is deliberately small: exactly what dense layers, a min/max
//! piecewise-linear network, and a temperature-softmax argsort relaxation
//! need. There is no broadcasting beyond "one operand is a 1x1 scalar".
//!
//! Deterministic tie rules: `min`/`max` reductions route the full
//! subgradient to the lowest flat index, and `abs` has subgradient 0 at 0.
//! Re-running the same tape yields bitwise-identical gradients.
//!
//! A graph is single-threaded; independent graphs may run in parallel.

use std::cell::RefCell;

use thiserror::Error;

use super::tensor::Tensor;

/// Floor below which `log` clamps its input (gradient is 0 in the clamped
/// region). Keeps cross-entropy terms finite when a probability underflows.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape { op: &'static str, shape: (usize, usize), reason: &'static str },
    #[error("{op}: constant argument must be finite, got {value}")]
    NonFiniteConstant { op: &'static str, value: f64 },
    #[error("backward requires a scalar terminal, got shape {shape:?}")]
    NonScalarTerminal { shape: (usize, usize) },
    #[error("{op}: node is not a leaf")]
    NotALeaf { op: &'static str },
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Neg(usize),
    Abs(usize),
    Exp(usize),
    Log(usize),
    Elu(usize),
    SoftmaxRow(usize),
    Sum(usize),
    MinReduce(usize),
    MaxReduce(usize),
    MinRows(usize),
    MaxRows(usize),
    Transpose(usize),
    Reshape(usize),
    StackScalars(Vec<usize>),
    StackColumns(Vec<usize>),
    SliceRows(usize, usize),
    ConcatRows(usize, usize),
}

struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

/// Recording tape plus node storage.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()) }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Current tape position, for a later [`Graph::rewind`].
    pub fn mark(&self) -> usize {
        self.len()
    }

    /// Drop every node recorded after `mark`. Earlier nodes (typically
    /// parameter leaves) keep their values and ids.
    pub fn rewind(&self, mark: usize) {
        self.nodes.borrow_mut().truncate(mark);
    }

    fn push(&self, value: Tensor, op: Op) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        let grad = Tensor::zeros(value.rows(), value.cols());
        nodes.push(Node { value, grad, op });
        NodeId(nodes.len() - 1)
    }

    /// Record an input node. Constants and parameters are both leaves; the
    /// distinction is only in who reads the gradient afterwards.
    pub fn leaf(&self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> NodeId {
        self.leaf(value)
    }

    pub fn scalar(&self, v: f64) -> NodeId {
        self.leaf(Tensor::scalar(v))
    }

    /// Replace the value of a leaf in place (used between optimizer steps).
    pub fn set_leaf(&self, id: NodeId, value: Tensor) -> Result<(), DiffError> {
        let mut nodes = self.nodes.borrow_mut();
        let node = &mut nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(DiffError::NotALeaf { op: "set_leaf" });
        }
        if node.value.shape() != value.shape() {
            return Err(DiffError::ShapeMismatch {
                op: "set_leaf",
                lhs: node.value.shape(),
                rhs: value.shape(),
            });
        }
        node.grad = Tensor::zeros(value.rows(), value.cols());
        node.value = value;
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id.0].value.clone()
    }

    pub fn with_value<R>(&self, id: NodeId, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id.0].value)
    }

    pub fn scalar_value(&self, id: NodeId) -> Result<f64, DiffError> {
        self.with_value(id, |t| {
            t.as_scalar().ok_or(DiffError::NonScalarTerminal { shape: t.shape() })
        })
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.with_value(id, |t| t.shape())
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id.0].grad.clone()
    }

    pub fn grad_scalar(&self, id: NodeId) -> Result<f64, DiffError> {
        let g = self.grad(id);
        g.as_scalar().ok_or(DiffError::NonScalarTerminal { shape: g.shape() })
    }

    // ---- operations ------------------------------------------------------

    pub fn matmul(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.cols() != vb.rows() {
                return Err(DiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: va.shape(),
                    rhs: vb.shape(),
                });
            }
            va.matmul(vb)
        };
        Ok(self.push(value, Op::Matmul(a.0, b.0)))
    }

    fn elementwise_pair(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(usize, usize), DiffError> {
        let nodes = self.nodes.borrow();
        let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
        if sa == sb || sa == (1, 1) || sb == (1, 1) {
            Ok(if sa == (1, 1) { sb } else { sa })
        } else {
            Err(DiffError::ShapeMismatch { op, lhs: sa, rhs: sb })
        }
    }

    /// Elementwise addition; either operand may be a scalar.
    pub fn add(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let shape = self.elementwise_pair("add", a, b)?;
        let value = {
            let nodes = self.nodes.borrow();
            broadcast_zip(&nodes[a.0].value, &nodes[b.0].value, shape, |x, y| x + y)
        };
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    /// Elementwise subtraction; either operand may be a scalar.
    pub fn sub(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let shape = self.elementwise_pair("sub", a, b)?;
        let value = {
            let nodes = self.nodes.borrow();
            broadcast_zip(&nodes[a.0].value, &nodes[b.0].value, shape, |x, y| x - y)
        };
        Ok(self.push(value, Op::Sub(a.0, b.0)))
    }

    /// Elementwise (Hadamard) product; either operand may be a scalar.
    pub fn mul(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let shape = self.elementwise_pair("mul", a, b)?;
        let value = {
            let nodes = self.nodes.borrow();
            broadcast_zip(&nodes[a.0].value, &nodes[b.0].value, shape, |x, y| x * y)
        };
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, a: NodeId, c: f64) -> Result<NodeId, DiffError> {
        if !c.is_finite() {
            return Err(DiffError::NonFiniteConstant { op: "scale", value: c });
        }
        let value = self.with_value(a, |t| t.map(|x| x * c));
        Ok(self.push(value, Op::Scale(a.0, c)))
    }

    pub fn neg(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| t.map(|x| -x));
        Ok(self.push(value, Op::Neg(a.0)))
    }

    /// |x|, with subgradient 0 at x = 0.
    pub fn abs(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| t.map(f64::abs));
        Ok(self.push(value, Op::Abs(a.0)))
    }

    pub fn exp(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| t.map(f64::exp));
        Ok(self.push(value, Op::Exp(a.0)))
    }

    /// ln(max(x, [`LOG_FLOOR`])); the clamp keeps losses finite.
    pub fn log(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| t.map(|x| x.max(LOG_FLOOR).ln()));
        Ok(self.push(value, Op::Log(a.0)))
    }

    /// ELU with alpha = 1: x for x > 0, e^x - 1 otherwise.
    pub fn elu(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| t.map(|x| if x > 0.0 { x } else { x.exp() - 1.0 }));
        Ok(self.push(value, Op::Elu(a.0)))
    }

    /// Row-wise softmax with max subtraction for overflow safety.
    pub fn softmax_row(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| {
            let mut out = Tensor::zeros(t.rows(), t.cols());
            for r in 0..t.rows() {
                let row = t.row_slice(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                let out_row = &mut out.data_mut()[r * t.cols()..(r + 1) * t.cols()];
                for (o, &x) in out_row.iter_mut().zip(row.iter()) {
                    *o = (x - m).exp();
                    sum += *o;
                }
                for o in out_row.iter_mut() {
                    *o /= sum;
                }
            }
            out
        });
        Ok(self.push(value, Op::SoftmaxRow(a.0)))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| Tensor::scalar(t.data().iter().sum()));
        Ok(self.push(value, Op::Sum(a.0)))
    }

    /// Minimum entry; ties route the subgradient to the lowest flat index.
    pub fn min_reduce(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| Tensor::scalar(t.data()[argmin(t.data())]));
        Ok(self.push(value, Op::MinReduce(a.0)))
    }

    /// Maximum entry; ties route the subgradient to the lowest flat index.
    pub fn max_reduce(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| Tensor::scalar(t.data()[argmax(t.data())]));
        Ok(self.push(value, Op::MaxReduce(a.0)))
    }

    /// Per-row minimum, as a column vector.
    pub fn min_rows(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| {
            Tensor::from_fn(t.rows(), 1, |r, _| {
                let row = t.row_slice(r);
                row[argmin(row)]
            })
        });
        Ok(self.push(value, Op::MinRows(a.0)))
    }

    /// Per-row maximum, as a column vector.
    pub fn max_rows(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| {
            Tensor::from_fn(t.rows(), 1, |r, _| {
                let row = t.row_slice(r);
                row[argmax(row)]
            })
        });
        Ok(self.push(value, Op::MaxRows(a.0)))
    }

    pub fn transpose(&self, a: NodeId) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| t.transposed());
        Ok(self.push(value, Op::Transpose(a.0)))
    }

    /// Row-major reshape to `rows x cols` (size must match).
    pub fn reshape(&self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| {
            if t.len() != rows * cols || rows == 0 || cols == 0 {
                None
            } else {
                Some(Tensor::from_vec(rows, cols, t.data().to_vec()))
            }
        });
        match value {
            Some(v) => Ok(self.push(v, Op::Reshape(a.0))),
            None => Err(DiffError::InvalidShape {
                op: "reshape",
                shape: (rows, cols),
                reason: "element count must be preserved",
            }),
        }
    }

    /// Stack scalar nodes into a column vector.
    pub fn stack_scalars(&self, ids: &[NodeId]) -> Result<NodeId, DiffError> {
        if ids.is_empty() {
            return Err(DiffError::InvalidShape {
                op: "stack_scalars",
                shape: (0, 0),
                reason: "needs at least one scalar",
            });
        }
        let mut data = Vec::with_capacity(ids.len());
        {
            let nodes = self.nodes.borrow();
            for id in ids {
                let v = &nodes[id.0].value;
                match v.as_scalar() {
                    Some(x) => data.push(x),
                    None => {
                        return Err(DiffError::InvalidShape {
                            op: "stack_scalars",
                            shape: v.shape(),
                            reason: "every operand must be 1x1",
                        })
                    }
                }
            }
        }
        let value = Tensor::column(&data);
        Ok(self.push(value, Op::StackScalars(ids.iter().map(|i| i.0).collect())))
    }

    /// Stack column vectors of equal length side by side into a matrix.
    pub fn stack_columns(&self, ids: &[NodeId]) -> Result<NodeId, DiffError> {
        if ids.is_empty() {
            return Err(DiffError::InvalidShape {
                op: "stack_columns",
                shape: (0, 0),
                reason: "needs at least one column",
            });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[ids[0].0].value.rows();
            for id in ids {
                let v = &nodes[id.0].value;
                if v.cols() != 1 || v.rows() != rows {
                    return Err(DiffError::ShapeMismatch {
                        op: "stack_columns",
                        lhs: (rows, 1),
                        rhs: v.shape(),
                    });
                }
            }
            Tensor::from_fn(rows, ids.len(), |r, c| nodes[ids[c].0].value.get(r, 0))
        };
        Ok(self.push(value, Op::StackColumns(ids.iter().map(|i| i.0).collect())))
    }

    /// Stack `a` on top of `b` (column counts must match).
    pub fn concat_rows(&self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.cols() != vb.cols() {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: va.shape(),
                    rhs: vb.shape(),
                });
            }
            let mut data = Vec::with_capacity(va.len() + vb.len());
            data.extend_from_slice(va.data());
            data.extend_from_slice(vb.data());
            Tensor::from_vec(va.rows() + vb.rows(), va.cols(), data)
        };
        Ok(self.push(value, Op::ConcatRows(a.0, b.0)))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&self, a: NodeId, start: usize, len: usize) -> Result<NodeId, DiffError> {
        let value = self.with_value(a, |t| {
            if len == 0 || start + len > t.rows() {
                None
            } else {
                let cols = t.cols();
                Some(Tensor::from_vec(
                    len,
                    cols,
                    t.data()[start * cols..(start + len) * cols].to_vec(),
                ))
            }
        });
        match value {
            Some(v) => Ok(self.push(v, Op::SliceRows(a.0, start))),
            None => Err(DiffError::InvalidShape {
                op: "slice_rows",
                shape: self.shape(a),
                reason: "slice out of range or empty",
            }),
        }
    }

    // ---- backward --------------------------------------------------------

    /// Run the chain rule in reverse from a scalar terminal, accumulating
    /// d(terminal)/d(node) into every node's gradient.
    pub fn backward(&self, terminal: NodeId) -> Result<(), DiffError> {
        let mut nodes = self.nodes.borrow_mut();
        {
            let t = &nodes[terminal.0].value;
            if !t.is_scalar() {
                return Err(DiffError::NonScalarTerminal { shape: t.shape() });
            }
        }
        for node in nodes.iter_mut() {
            node.grad.fill(0.0);
        }
        nodes[terminal.0].grad.set(0, 0, 1.0);

        for i in (0..nodes.len()).rev() {
            // Split borrows: the output node is read-only here, inputs are
            // accumulated into via raw indices (inputs always precede i).
            let (head, tail) = nodes.split_at_mut(i);
            let node = &tail[0];
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let g = &node.grad;
                    let da = g.matmul(&head[*b].value.transposed());
                    let db = head[*a].value.transposed().matmul(g);
                    accumulate(&mut head[*a].grad, &da);
                    accumulate(&mut head[*b].grad, &db);
                }
                Op::Add(a, b) => {
                    let g = node.grad.clone();
                    accumulate_broadcast(&mut head[*a].grad, &g, 1.0);
                    accumulate_broadcast(&mut head[*b].grad, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    let g = node.grad.clone();
                    accumulate_broadcast(&mut head[*a].grad, &g, 1.0);
                    accumulate_broadcast(&mut head[*b].grad, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let g = node.grad.clone();
                    let (va, vb) = (head[*a].value.clone(), head[*b].value.clone());
                    accumulate_mul(&mut head[*a].grad, &g, &vb);
                    accumulate_mul(&mut head[*b].grad, &g, &va);
                }
                Op::Scale(a, c) => {
                    let g = node.grad.map(|x| x * c);
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::Neg(a) => {
                    let g = node.grad.map(|x| -x);
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::Abs(a) => {
                    let input = &head[*a].value;
                    let g = Tensor::from_fn(input.rows(), input.cols(), |r, c| {
                        let x = input.get(r, c);
                        let s = if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        node.grad.get(r, c) * s
                    });
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::Exp(a) => {
                    let out = &node.value;
                    let g = Tensor::from_fn(out.rows(), out.cols(), |r, c| {
                        node.grad.get(r, c) * out.get(r, c)
                    });
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::Log(a) => {
                    let input = &head[*a].value;
                    let g = Tensor::from_fn(input.rows(), input.cols(), |r, c| {
                        let x = input.get(r, c);
                        if x > LOG_FLOOR {
                            node.grad.get(r, c) / x
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::Elu(a) => {
                    let input = &head[*a].value;
                    let g = Tensor::from_fn(input.rows(), input.cols(), |r, c| {
                        let x = input.get(r, c);
                        let d = if x > 0.0 { 1.0 } else { x.exp() };
                        node.grad.get(r, c) * d
                    });
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::SoftmaxRow(a) => {
                    let y = &node.value;
                    let mut g = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = node.grad.row_slice(r);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                        let out_row = &mut g.data_mut()[r * y.cols()..(r + 1) * y.cols()];
                        for ((o, &yv), &gv) in out_row.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::Sum(a) => {
                    let g = node.grad.as_scalar().expect("sum output is scalar");
                    let input_shape = head[*a].value.shape();
                    let g = Tensor::from_fn(input_shape.0, input_shape.1, |_, _| g);
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::MinReduce(a) | Op::MaxReduce(a) => {
                    let g = node.grad.as_scalar().expect("reduce output is scalar");
                    let data = head[*a].value.data();
                    let idx = if matches!(node.op, Op::MinReduce(_)) {
                        argmin(data)
                    } else {
                        argmax(data)
                    };
                    head[*a].grad.data_mut()[idx] += g;
                }
                Op::MinRows(a) | Op::MaxRows(a) => {
                    let is_min = matches!(node.op, Op::MinRows(_));
                    let cols = head[*a].value.cols();
                    for r in 0..head[*a].value.rows() {
                        let row = head[*a].value.row_slice(r);
                        let idx = if is_min { argmin(row) } else { argmax(row) };
                        let g = node.grad.get(r, 0);
                        head[*a].grad.data_mut()[r * cols + idx] += g;
                    }
                }
                Op::Transpose(a) => {
                    let g = node.grad.transposed();
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::Reshape(a) => {
                    let shape = head[*a].value.shape();
                    let g = Tensor::from_vec(shape.0, shape.1, node.grad.data().to_vec());
                    accumulate(&mut head[*a].grad, &g);
                }
                Op::StackScalars(ids) => {
                    for (k, src) in ids.iter().enumerate() {
                        let g = node.grad.get(k, 0);
                        head[*src].grad.data_mut()[0] += g;
                    }
                }
                Op::StackColumns(ids) => {
                    for (c, src) in ids.iter().enumerate() {
                        for r in 0..node.grad.rows() {
                            let g = node.grad.get(r, c);
                            head[*src].grad.data_mut()[r] += g;
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let cols = node.grad.cols();
                    for r in 0..node.grad.rows() {
                        for c in 0..cols {
                            let g = node.grad.get(r, c);
                            head[*a].grad.data_mut()[(start + r) * cols + c] += g;
                        }
                    }
                }
                Op::ConcatRows(a, b) => {
                    let split = head[*a].value.len();
                    let g = node.grad.data();
                    for (o, &x) in head[*a].grad.data_mut().iter_mut().zip(&g[..split]) {
                        *o += x;
                    }
                    for (o, &x) in head[*b].grad.data_mut().iter_mut().zip(&g[split..]) {
                        *o += x;
                    }
                }
            }
        }
        Ok(())
    }
}

fn argmin(data: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in data.iter().enumerate().skip(1) {
        if x < data[best] {
            best = i;
        }
    }
    best
}

fn argmax(data: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in data.iter().enumerate().skip(1) {
        if x > data[best] {
            best = i;
        }
    }
    best
}

/// Apply `f` elementwise with scalar broadcast on either side.
fn broadcast_zip(a: &Tensor, b: &Tensor, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Tensor {
    match (a.is_scalar(), b.is_scalar()) {
        (false, false) | (true, true) => Tensor::from_fn(shape.0, shape.1, |r, c| f(a.get(r, c), b.get(r, c))),
        (true, false) => {
            let av = a.get(0, 0);
            b.map(|x| f(av, x))
        }
        (false, true) => {
            let bv = b.get(0, 0);
            a.map(|x| f(x, bv))
        }
    }
}

/// grad += g, where g has the grad's shape.
fn accumulate(grad: &mut Tensor, g: &Tensor) {
    debug_assert_eq!(grad.shape(), g.shape());
    for (o, &x) in grad.data_mut().iter_mut().zip(g.data().iter()) {
        *o += x;
    }
}

/// grad += sign * g, collapsing to a scalar sum when the operand was a
/// broadcast 1x1.
fn accumulate_broadcast(grad: &mut Tensor, g: &Tensor, sign: f64) {
    if grad.shape() == g.shape() {
        for (o, &x) in grad.data_mut().iter_mut().zip(g.data().iter()) {
            *o += sign * x;
        }
    } else {
        debug_assert!(grad.is_scalar());
        let total: f64 = g.data().iter().sum();
        grad.data_mut()[0] += sign * total;
    }
}

/// grad += g * other, handling the scalar-broadcast cases of `mul`.
fn accumulate_mul(grad: &mut Tensor, g: &Tensor, other: &Tensor) {
    if grad.is_scalar() && !g.is_scalar() {
        // This operand was the broadcast scalar: y = s * B.
        let total: f64 = g.data().iter().zip(other.data().iter()).map(|(&x, &y)| x * y).sum();
        grad.data_mut()[0] += total;
    } else if other.is_scalar() && !g.is_scalar() {
        // Other operand was the scalar: d(this) = g * s.
        let s = other.get(0, 0);
        for (o, &x) in grad.data_mut().iter_mut().zip(g.data().iter()) {
            *o += x * s;
        }
    } else {
        debug_assert_eq!(grad.shape(), g.shape());
        for ((o, &x), &y) in grad.data_mut().iter_mut().zip(g.data().iter()).zip(other.data().iter()) {
            *o += x * y;
        }
    }
}
