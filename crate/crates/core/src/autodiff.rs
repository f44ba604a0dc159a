//! Dense reverse-mode automatic differentiation over 64-bit floats.
//!
//! A [`Tape`] records every primitive application in insertion order; since
//! an operation can only consume values that already exist, that order is a
//! topological order of the graph and [`Tape::backward`] simply walks it in
//! reverse. Values are never mutated after they are recorded.
//!
//! Parameters are ordinary [`Tensor`]s owned by the model. Binding one to a
//! tape with [`Tape::param`] creates a leaf node keyed by the tensor's
//! identity, so the resulting [`Gradients`] can be looked up by tensor.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: Primitive,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("log: non-positive input {value} at index {index}")]
    NonPositiveLog { index: usize, value: f64 },
    #[error("backward: loss must hold exactly one element, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tensor: shape {shape:?} does not hold {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{op}: split point {at} outside 1..{width}")]
    BadSplit { op: Primitive, at: usize, width: usize },
    #[error("non-finite value while evaluating coordinate {index}")]
    NonFinite { index: usize },
}

pub type Result<T> = std::result::Result<T, AdError>;

/// Identifier of each differentiable primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Tanh,
    Relu,
    Exp,
    Log,
    Square,
    Sum,
    Mean,
    Split,
    Concat,
    AddRow,
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::MatMul => "matmul",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Square => "square",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Split => "split",
            Primitive::Concat => "concat",
            Primitive::AddRow => "broadcast-add-row",
        };
        f.write_str(s)
    }
}

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed)
}

/// Dense row-major tensor. Cloning yields a tensor with a new identity.
#[derive(Debug)]
pub struct Tensor {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: self.requires_grad,
            grad: self.grad.clone(),
        }
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(AdError::BadShape { shape, len: data.len() });
        }
        Ok(Self {
            id: fresh_id(),
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// A trainable tensor.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(shape, data)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zero-sized tensor")
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("zero-sized tensor")
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(vec![1], vec![value]).expect("scalar")
    }

    /// Stack equal-length rows into an `[n, d]` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(AdError::BadShape {
                    shape: vec![rows.len(), d],
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), d], data)
    }

    /// `n` copies of `row` as an `[n, row.len()]` matrix.
    pub fn repeat_row(row: &[f64], n: usize) -> Self {
        let mut data = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        Self::new(vec![n, row.len()], data).expect("empty row")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading extent; 1 for rank-0/1 tensors.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Trailing extent.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Slice { src: usize, start: usize },
    Concat(usize, usize),
    AddRow(usize, usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<u64, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Bind a tensor as a leaf. Binding the same tensor twice returns the same
    /// node, so a parameter used in several places accumulates one gradient.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        if let Some(&id) = self.bound.borrow().get(&t.id) {
            return Var { tape: self, id };
        }
        let v = self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad);
        self.bound.borrow_mut().insert(t.id, v.id);
        v
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t.shape, t.data, Op::Leaf, false)
    }

    pub fn zeros(&self, shape: Vec<usize>) -> Var<'_> {
        self.constant(Tensor::zeros(shape))
    }

    pub fn ones(&self, shape: Vec<usize>) -> Var<'_> {
        self.constant(Tensor::full(shape, 1.0))
    }

    /// Reverse sweep from a one-element loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(AdError::NonScalarLoss {
                shape: root.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            backprop_node(&nodes, node, &g, &mut grads);
            grads[i] = Some(g);
        }

        // Every bound trainable leaf gets a buffer, even if unreachable.
        let bound = self.bound.borrow().clone();
        for &id in bound.values() {
            if nodes[id].requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![0.0; nodes[id].value.len()]);
            }
        }
        Ok(Gradients { grads, bound })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let buf = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(buf);
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, a, |ga| add_assign(ga, g));
            accumulate(nodes, grads, b, |gb| add_assign(gb, g));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, a, |ga| add_assign(ga, g));
            accumulate(nodes, grads, b, |gb| {
                gb.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi)
            });
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            accumulate(nodes, grads, a, |ga| {
                for ((o, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                    *o += gi * bi;
                }
            });
            accumulate(nodes, grads, b, |gb| {
                for ((o, gi), ai) in gb.iter_mut().zip(g).zip(va) {
                    *o += gi * ai;
                }
            });
        }
        Op::Scale(a, c) => accumulate(nodes, grads, a, |ga| {
            ga.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi)
        }),
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
            let n = nodes[b].shape[1];
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            accumulate(nodes, grads, a, |ga| {
                // dA = G · Bᵀ
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let bp = &vb[p * n..(p + 1) * n];
                        ga[i * k + p] += dot(gi, bp);
                    }
                }
            });
            accumulate(nodes, grads, b, |gb| {
                // dB = Aᵀ · G
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let a_ip = va[i * k + p];
                        if a_ip != 0.0 {
                            axpy(&mut gb[p * n..(p + 1) * n], a_ip, gi);
                        }
                    }
                }
            });
        }
        Op::Tanh(a) => accumulate(nodes, grads, a, |ga| {
            for ((o, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                *o += gi * (1.0 - y * y);
            }
        }),
        Op::Relu(a) => {
            let va = &nodes[a].value;
            accumulate(nodes, grads, a, |ga| {
                for ((o, gi), x) in ga.iter_mut().zip(g).zip(va) {
                    if *x > 0.0 {
                        *o += gi;
                    }
                }
            })
        }
        Op::Exp(a) => accumulate(nodes, grads, a, |ga| {
            for ((o, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                *o += gi * y;
            }
        }),
        Op::Log(a) => {
            let va = &nodes[a].value;
            accumulate(nodes, grads, a, |ga| {
                for ((o, gi), x) in ga.iter_mut().zip(g).zip(va) {
                    *o += gi / x;
                }
            })
        }
        Op::Square(a) => {
            let va = &nodes[a].value;
            accumulate(nodes, grads, a, |ga| {
                for ((o, gi), x) in ga.iter_mut().zip(g).zip(va) {
                    *o += 2.0 * x * gi;
                }
            })
        }
        Op::Sum(a) => accumulate(nodes, grads, a, |ga| ga.iter_mut().for_each(|o| *o += g[0])),
        Op::Mean(a) => {
            let n = nodes[a].value.len() as f64;
            accumulate(nodes, grads, a, |ga| ga.iter_mut().for_each(|o| *o += g[0] / n))
        }
        Op::Slice { src, start } => {
            let src_w = *nodes[src].shape.last().unwrap();
            let w = *node.shape.last().unwrap();
            accumulate(nodes, grads, src, |gs| {
                for (r, gr) in g.chunks(w).enumerate() {
                    add_assign(&mut gs[r * src_w + start..r * src_w + start + w], gr);
                }
            })
        }
        Op::Concat(a, b) => {
            let wa = *nodes[a].shape.last().unwrap();
            let wb = *nodes[b].shape.last().unwrap();
            let w = wa + wb;
            accumulate(nodes, grads, a, |ga| {
                for (r, gr) in g.chunks(w).enumerate() {
                    add_assign(&mut ga[r * wa..(r + 1) * wa], &gr[..wa]);
                }
            });
            accumulate(nodes, grads, b, |gb| {
                for (r, gr) in g.chunks(w).enumerate() {
                    add_assign(&mut gb[r * wb..(r + 1) * wb], &gr[wa..]);
                }
            });
        }
        Op::AddRow(a, row) => {
            accumulate(nodes, grads, a, |ga| add_assign(ga, g));
            let w = nodes[row].value.len();
            accumulate(nodes, grads, row, |gr| {
                for chunk in g.chunks(w) {
                    add_assign(gr, chunk);
                }
            });
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

#[inline]
fn add_assign(y: &mut [f64], x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += xi);
}

fn matmul_values(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip != 0.0 {
                axpy(row, a_ip, &b[p * n..(p + 1) * n]);
            }
        }
    }
    out
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    bound: HashMap<u64, usize>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id)?.as_deref()
    }

    /// Gradient for a tensor bound with [`Tape::param`].
    pub fn of(&self, t: &Tensor) -> Option<&[f64]> {
        let id = *self.bound.get(&t.id)?;
        self.grads[id].as_deref()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn to_tensor(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("recorded shapes are valid")
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn rows(&self) -> usize {
        let s = self.shape();
        if s.len() >= 2 {
            s[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        self.shape().last().copied().unwrap_or(1)
    }

    fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect())
        };
        let rg = self.requires_grad();
        self.tape.push(shape, value, op, rg)
    }

    fn elementwise(self, other: Var<'t>, op: Primitive, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return Err(AdError::ShapeMismatch {
                    op,
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), v)
        };
        let node_op = match op {
            Primitive::Add => Op::Add(self.id, other.id),
            Primitive::Sub => Op::Sub(self.id, other.id),
            Primitive::Mul => Op::Mul(self.id, other.id),
            _ => unreachable!("not an elementwise binary primitive"),
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(shape, value, node_op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, Primitive::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, Primitive::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, Primitive::Mul, |a, b| a * b)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(move |x| c * x, Op::Scale(self.id, c))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(AdError::ShapeMismatch {
                    op: Primitive::MatMul,
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            (vec![m, n], matmul_values(&a.value, &b.value, m, k, n))
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(shape, value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    pub fn log(self) -> Result<Var<'t>> {
        {
            let nodes = self.tape.nodes.borrow();
            if let Some((index, &value)) = nodes[self.id].value.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(AdError::NonPositiveLog { index, value });
            }
        }
        Ok(self.unary(f64::ln, Op::Log(self.id)))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, Op::Square(self.id))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.tape.nodes.borrow()[self.id].value.iter().sum();
        let rg = self.requires_grad();
        self.tape.push(vec![1], vec![s], Op::Sum(self.id), rg)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(self) -> Var<'t> {
        let m = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            v.iter().sum::<f64>() / v.len() as f64
        };
        let rg = self.requires_grad();
        self.tape.push(vec![1], vec![m], Op::Mean(self.id), rg)
    }

    fn slice_last(self, start: usize, width: usize) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let w = *n.shape.last().unwrap();
            let value: Vec<f64> = n.value.chunks(w).flat_map(|r| r[start..start + width].iter().copied()).collect();
            let mut shape = n.shape.clone();
            *shape.last_mut().unwrap() = width;
            (shape, value)
        };
        let rg = self.requires_grad();
        self.tape.push(shape, value, Op::Slice { src: self.id, start }, rg)
    }

    /// Split along the last axis into widths `at` and `width - at`.
    pub fn split(self, at: usize) -> Result<(Var<'t>, Var<'t>)> {
        let shape = self.shape();
        let width = shape.last().copied().unwrap_or(0);
        if shape.is_empty() || at == 0 || at >= width {
            return Err(AdError::BadSplit {
                op: Primitive::Split,
                at,
                width,
            });
        }
        Ok((self.slice_last(0, at), self.slice_last(at, width - at)))
    }

    /// Concatenate along the last axis.
    pub fn concat(self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let ra = a.shape.len();
            if ra == 0 || ra != b.shape.len() || a.shape[..ra - 1] != b.shape[..ra - 1] {
                return Err(AdError::ShapeMismatch {
                    op: Primitive::Concat,
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (wa, wb) = (a.shape[ra - 1], b.shape[ra - 1]);
            let mut value = Vec::with_capacity(a.value.len() + b.value.len());
            for (ra_, rb_) in a.value.chunks(wa).zip(b.value.chunks(wb)) {
                value.extend_from_slice(ra_);
                value.extend_from_slice(rb_);
            }
            let mut shape = a.shape.clone();
            shape[ra - 1] = wa + wb;
            (shape, value)
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(shape, value, Op::Concat(self.id, other.id), rg))
    }

    /// `self[i, :] + row` for every row `i`; `row` has shape `[n]` or `[1, n]`.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, r) = (&nodes[self.id], &nodes[row.id]);
            let row_ok = match r.shape.as_slice() {
                [n] => Some(*n),
                [1, n] => Some(*n),
                _ => None,
            };
            if a.shape.len() != 2 || row_ok != Some(a.shape[1]) {
                return Err(AdError::ShapeMismatch {
                    op: Primitive::AddRow,
                    lhs: a.shape.clone(),
                    rhs: r.shape.clone(),
                });
            }
            let w = a.shape[1];
            let mut value = a.value.clone();
            for chunk in value.chunks_mut(w) {
                add_assign(chunk, &r.value);
            }
            (a.shape.clone(), value)
        };
        let rg = self.requires_grad() || row.requires_grad();
        Ok(self.tape.push(shape, value, Op::AddRow(self.id, row.id), rg))
    }

    // Composites built from the primitives above.

    /// Per-row sums of an `[n, d]` matrix as `[n, 1]`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let d = self.cols();
        let ones = self.tape.ones(vec![d, 1]);
        self.matmul(ones)
    }

    /// Expand a one-element `[1, 1]` tensor to `[rows, cols]`.
    pub fn broadcast_scalar(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let left = self.tape.ones(vec![rows, 1]);
        let right = self.tape.ones(vec![1, cols]);
        left.matmul(self)?.matmul(right)
    }

    /// Multiply every element of a matrix by a `[1, 1]` scalar variable.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        let full = s.broadcast_scalar(self.rows(), self.cols())?;
        self.mul(full)
    }

    /// Add a constant to every element.
    pub fn add_const(self, c: f64) -> Result<Var<'t>> {
        let shape = self.shape();
        let k = self.tape.constant(Tensor::full(shape, c));
        self.add(k)
    }
}

/// Compare autodiff against central differences for a scalar function.
///
/// Returns `max_i |g_ad_i - g_fd_i| / max(1, |g_fd_i|)`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    assert!(step > 0.0, "grad_check step must be positive");
    let mut x = point.clone();
    x.requires_grad = true;
    let tape = Tape::new();
    let xv = tape.param(&x);
    let loss = f(&tape, xv)?;
    if !loss.item().is_finite() {
        return Err(AdError::NonFinite { index: 0 });
    }
    let grads = tape.backward(loss)?;
    let analytic = grads.wrt(xv).expect("leaf gradient").to_vec();

    let eval = |t: &Tensor, index: usize| -> Result<f64> {
        let tape = Tape::new();
        let v = f(&tape, tape.constant(t.clone()))?.item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(AdError::NonFinite { index })
        }
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let fd = (eval(&plus, i)? - eval(&minus, i)?) / (2.0 * step);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
