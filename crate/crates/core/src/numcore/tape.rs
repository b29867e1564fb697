//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] is built fresh for every loss evaluation. Values enter the tape
//! either as constants (never differentiated) or as parameters, which carry a
//! [`ParamId`] so that [`Tape::backward`] can report gradients keyed by
//! parameter. Every value is a 2-D matrix; column vectors are `[n, 1]` and
//! scalars are `[1, 1]`.
//!
//! Operations never return `Result`. The first failure (a shape mismatch or a
//! non-finite output) poisons the tape, and is surfaced by [`Tape::scalar`]
//! and [`Tape::backward`]. Binary elementwise operations broadcast any
//! dimension of size 1.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, Axis, Zip};

use super::TensorError;

pub type Matrix = Array2<f64>;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(0);

/// Process-unique identity of a trainable parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(u64);

impl ParamId {
    pub fn fresh() -> Self {
        ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named-by-id trainable matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    id: ParamId,
    pub value: Matrix,
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        Self {
            id: ParamId::fresh(),
            value,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    /// Copy of the values under a new identity (used for target networks).
    pub fn fresh_copy(&self) -> Self {
        Self::new(self.value.clone())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    Max(usize, usize),
    Neg(usize),
    Abs(usize),
    Pow(usize, f64),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Scale(usize, f64),
    Offset(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    Broadcast(usize),
    Columns(usize, usize),
    Concat(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    error: Option<TensorError>,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

/// Sums `grad` down to `shape` along broadcast axes.
fn reduce_to(grad: Matrix, shape: (usize, usize)) -> Matrix {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn error(&self) -> Option<&TensorError> {
        self.error.as_ref()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Whether gradients can flow into `v` from a loss built on top of it.
    pub fn is_attached(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a `[1, 1]` result, or the first recorded failure.
    pub fn scalar(&self, v: Var) -> Result<f64, TensorError> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let value = self.value(v);
        if value.dim() != (1, 1) {
            return Err(TensorError::NotScalar(value.dim()));
        }
        Ok(value[[0, 0]])
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, "constant", false, None)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Matrix::from_elem((1, 1), value))
    }

    /// Records a column vector `[n, 1]`.
    pub fn column(&mut self, values: &[f64]) -> Var {
        self.constant(Matrix::from_shape_vec((values.len(), 1), values.to_vec()).unwrap())
    }

    pub fn param(&mut self, p: &Param) -> Var {
        self.push(p.value.clone(), Op::Leaf, "param", true, Some(p.id))
    }

    /// Parameter values entered as a constant: no gradient reaches `p`.
    pub fn frozen(&mut self, p: &Param) -> Var {
        self.constant(p.value.clone())
    }

    /// Stop-gradient copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(
        &mut self,
        value: Matrix,
        op: Op,
        name: &'static str,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        if self.error.is_none() && !value.iter().all(|x| x.is_finite()) {
            self.error = Some(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn fail(&mut self, err: TensorError) -> Var {
        if self.error.is_none() {
            self.error = Some(err);
        }
        self.nodes.push(Node {
            value: Matrix::zeros((1, 1)),
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_any(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[x.0].value.mapv(f);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, op, name, rg, None)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let Some(out) = broadcast_shape(sa, sb) else {
            return self.fail(TensorError::ShapeMismatch {
                op: name,
                lhs: sa,
                rhs: sb,
            });
        };
        let va = self.nodes[a.0].value.broadcast(out).unwrap();
        let vb = self.nodes[b.0].value.broadcast(out).unwrap();
        let value = Zip::from(&va).and(&vb).map_collect(|&x, &y| f(x, y));
        let rg = self.grad_any(&[a.0, b.0]);
        self.push(value, op, name, rg, None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return self.fail(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let rg = self.grad_any(&[a.0, b.0]);
        self.push(value, Op::MatMul(a.0, b.0), "matmul", rg, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "sub", Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "mul", Op::Mul(a.0, b.0), |x, y| x * y)
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "min", Op::Min(a.0, b.0), f64::min)
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "max", Op::Max(a.0, b.0), f64::max)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg(x.0), "neg", |v| -v)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x.0), "abs", f64::abs)
    }

    pub fn pow(&mut self, x: Var, exponent: f64) -> Var {
        self.unary(x, Op::Pow(x.0, exponent), "pow", |v| v.powf(exponent))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x.0), "exp", f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x.0), "log", f64::ln)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x.0), "tanh", f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x.0), "relu", |v| v.max(0.0))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x.0), "softplus", softplus)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x.0, c), "scale", |v| v * c)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Offset(x.0), "offset", |v| v + c)
    }

    /// Clamp into `[lo, hi]`; the gradient passes only inside the range.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x.0, lo, hi), "clamp", |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.nodes[x.0].value.sum());
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::Sum(x.0), "sum", rg, None)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let value = Matrix::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::Mean(x.0), "mean", rg, None)
    }

    /// Row-wise sum: `[n, m] -> [n, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::SumCols(x.0), "sum_cols", rg, None)
    }

    pub fn broadcast(&mut self, x: Var, shape: (usize, usize)) -> Var {
        let sx = self.shape(x);
        match self.nodes[x.0].value.broadcast(shape) {
            Some(view) => {
                let value = view.to_owned();
                let rg = self.nodes[x.0].requires_grad;
                self.push(value, Op::Broadcast(x.0), "broadcast", rg, None)
            }
            None => self.fail(TensorError::ShapeMismatch {
                op: "broadcast",
                lhs: sx,
                rhs: shape,
            }),
        }
    }

    /// Columns `start..start + len` of `x`.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Var {
        let sx = self.shape(x);
        if start + len > sx.1 {
            return self.fail(TensorError::ShapeMismatch {
                op: "columns",
                lhs: sx,
                rhs: (sx.0, start + len),
            });
        }
        let value = self.nodes[x.0].value.slice(s![.., start..start + len]).to_owned();
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::Columns(x.0, start), "columns", rg, None)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        if let Some(bad) = parts.iter().find(|p| self.shape(**p).0 != rows) {
            let rhs = self.shape(*bad);
            return self.fail(TensorError::ShapeMismatch {
                op: "concat",
                lhs: self.shape(parts[0]),
                rhs,
            });
        }
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).unwrap();
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.grad_any(&idx);
        self.push(value, Op::Concat(idx), "concat", rg, None)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Matrix::ones((1, 1)));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = BTreeMap::new();
        for (i, g) in grads.iter().enumerate() {
            if let (Some(id), Some(g)) = (self.nodes[i].param, g) {
                match params.get_mut(&id) {
                    Some(acc) => *acc += g,
                    None => {
                        params.insert(id, g.clone());
                    }
                }
            }
        }
        Ok(Gradients {
            params,
            nodes: grads,
        })
    }

    fn send(&self, grads: &mut [Option<Matrix>], parent: usize, g: Matrix) {
        // graph edges always point to earlier nodes
        assert!(parent < grads.len(), "graph cycle");
        if self.nodes[parent].requires_grad {
            let shape = self.nodes[parent].value.dim();
            accumulate(&mut grads[parent], reduce_to(g, shape));
        }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &self.nodes[i].value;
        let val = |j: usize| &self.nodes[j].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[*a].requires_grad {
                    self.send(grads, *a, g.dot(&val(*b).t()));
                }
                if self.nodes[*b].requires_grad {
                    self.send(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.nodes[*a].requires_grad {
                    self.send(grads, *a, g * val(*b));
                }
                if self.nodes[*b].requires_grad {
                    self.send(grads, *b, g * val(*a));
                }
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let take_min = matches!(self.nodes[i].op, Op::Min(..));
                let shape = g.dim();
                let va = val(*a).broadcast(shape).unwrap();
                let vb = val(*b).broadcast(shape).unwrap();
                let to_a = Zip::from(g).and(&va).and(&vb).map_collect(|&g, &x, &y| {
                    let a_wins = if take_min { x <= y } else { x >= y };
                    if a_wins {
                        g
                    } else {
                        0.0
                    }
                });
                let to_b = g - &to_a;
                self.send(grads, *a, to_a);
                self.send(grads, *b, to_b);
            }
            Op::Neg(x) => self.send(grads, *x, -g),
            Op::Abs(x) => {
                let d = Zip::from(g).and(val(*x)).map_collect(|&g, &v| {
                    if v > 0.0 {
                        g
                    } else if v < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                self.send(grads, *x, d);
            }
            Op::Pow(x, p) => {
                let p = *p;
                let d = Zip::from(g).and(val(*x)).map_collect(|&g, &v| {
                    if v == 0.0 {
                        0.0
                    } else {
                        g * p * v.powf(p - 1.0)
                    }
                });
                self.send(grads, *x, d);
            }
            Op::Exp(x) => self.send(grads, *x, g * out),
            Op::Log(x) => self.send(grads, *x, g / val(*x)),
            Op::Tanh(x) => {
                let d = Zip::from(g).and(out).map_collect(|&g, &y| g * (1.0 - y * y));
                self.send(grads, *x, d);
            }
            Op::Relu(x) => {
                let d = Zip::from(g)
                    .and(val(*x))
                    .map_collect(|&g, &v| if v > 0.0 { g } else { 0.0 });
                self.send(grads, *x, d);
            }
            Op::Softplus(x) => {
                let d = Zip::from(g).and(val(*x)).map_collect(|&g, &v| g * sigmoid(v));
                self.send(grads, *x, d);
            }
            Op::Scale(x, c) => self.send(grads, *x, g * *c),
            Op::Offset(x) => self.send(grads, *x, g.clone()),
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = Zip::from(g).and(val(*x)).map_collect(|&g, &v| {
                    if v >= lo && v <= hi {
                        g
                    } else {
                        0.0
                    }
                });
                self.send(grads, *x, d);
            }
            Op::Sum(x) => {
                let shape = val(*x).dim();
                self.send(grads, *x, Matrix::from_elem(shape, g[[0, 0]]));
            }
            Op::Mean(x) => {
                let v = val(*x);
                let n = v.len() as f64;
                self.send(grads, *x, Matrix::from_elem(v.dim(), g[[0, 0]] / n));
            }
            Op::SumCols(x) => {
                let shape = val(*x).dim();
                self.send(grads, *x, g.broadcast(shape).unwrap().to_owned());
            }
            Op::Broadcast(x) => self.send(grads, *x, g.clone()),
            Op::Columns(x, start) => {
                let mut d = Matrix::zeros(val(*x).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.send(grads, *x, d);
            }
            Op::Concat(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    if self.nodes[p].requires_grad {
                        self.send(grads, p, g.slice(s![.., col..col + w]).to_owned());
                    }
                    col += w;
                }
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: BTreeMap<ParamId, Matrix>,
    nodes: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient map built directly from parameter entries.
    pub fn from_params(entries: impl IntoIterator<Item = (ParamId, Matrix)>) -> Self {
        Self {
            params: entries.into_iter().collect(),
            nodes: Vec::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.params.contains_key(&id)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    /// Gradient with respect to any recorded value that lies on a
    /// differentiable path.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}
