//! Define-by-run reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node holding its forward value, so inputs always precede the nodes that
//! consume them and a single reverse sweep yields exact gradients.

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    ConcatCols(Var, Var),
    HStack(Vec<Var>),
    Hadamard(Var, Var),
    Add(Var, Var),
    Activation(Activation, Var),
    Gate { z: Var, a: Var, b: Var },
    AddBias(Var, Var),
    Symmetrize(Var),
    ScaleShift(Var, f64),
    Sum(Var),
    MaeLoss { pred: Var, sign_mask: Matrix, count: f64 },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
    params: Vec<Var>,
}

impl Gradients {
    /// Gradient with respect to a parameter; zero if it does not reach the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Per-parameter gradients in registration order.
    pub fn into_param_grads(mut self) -> Vec<Matrix> {
        let params = std::mem::take(&mut self.params);
        params
            .into_iter()
            .map(|p| match self.adjoints[p.0].take() {
                Some(g) => g,
                None => {
                    let (r, c) = self.shapes[p.0];
                    Matrix::zeros(r, c)
                }
            })
            .collect()
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc
            .add_assign(&g)
            .expect("adjoint shape matches its node by construction"),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input. Parameters are numbered in registration order.
    pub fn param(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Param, true);
        self.params.push(v);
        v
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_cols(self.value(b))?;
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::ConcatCols(a, b), g))
    }

    /// Stacks column blocks left to right; all parts share a row count.
    pub fn hstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("hstack of zero parts".into()))?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            out = out.concat_cols(self.value(p))?;
        }
        let g = parts.iter().any(|&p| self.grad(p));
        Ok(self.push(out, Op::HStack(parts.to_vec()), g))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::Hadamard(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let g = self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        let out = self.value(a).map(|x| kind.apply(x));
        let g = self.grad(a);
        self.push(out, Op::Activation(kind, a), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(Activation::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(Activation::Tanh, a)
    }

    /// `(1 − z) ⊙ a + z ⊙ b`.
    pub fn affine_combination(&mut self, z: Var, a: Var, b: Var) -> Result<Var> {
        let (zs, as_, bs) = (self.shape(z), self.shape(a), self.shape(b));
        if zs != as_ {
            return Err(Error::shape("affine_combination", zs, as_));
        }
        if zs != bs {
            return Err(Error::shape("affine_combination", zs, bs));
        }
        let (zv, av, bv) = (self.value(z), self.value(a), self.value(b));
        let data = zv
            .data()
            .iter()
            .zip(av.data())
            .zip(bv.data())
            .map(|((&z, &a), &b)| (1.0 - z) * a + z * b)
            .collect();
        let out = Matrix::new(zs.0, zs.1, data)?;
        let g = self.grad(z) || self.grad(a) || self.grad(b);
        Ok(self.push(out, Op::Gate { z, a, b }, g))
    }

    /// Broadcast-adds a `1×n` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape("add_bias", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        let cols = out.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % cols];
        }
        let g = self.grad(a) || self.grad(bias);
        Ok(self.push(out, Op::AddBias(a, bias), g))
    }

    /// `(a + aᵀ) / 2` for a square `a`.
    pub fn symmetrize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != av.cols() {
            return Err(Error::shape("symmetrize", av.shape(), av.shape()));
        }
        let out = symmetric_part(av);
        let g = self.grad(a);
        Ok(self.push(out, Op::Symmetrize(a), g))
    }

    /// `scale · a + shift`, elementwise.
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| x * scale + shift);
        let g = self.grad(a);
        self.push(out, Op::ScaleShift(a, scale), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let g = self.grad(a);
        self.push(out, Op::Sum(a), g)
    }

    /// Masked mean absolute error `Σ mask⊙|pred − target| / Σ mask`.
    ///
    /// The subgradient at `pred == target` is taken as zero.
    pub fn mae_loss(&mut self, pred: Var, target: &Matrix, mask: &Matrix) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::shape("mae_loss", pv.shape(), target.shape()));
        }
        if pv.shape() != mask.shape() {
            return Err(Error::shape("mae_loss", pv.shape(), mask.shape()));
        }
        if let Some(bad) = mask.data().iter().find(|&&m| m != 0.0 && m != 1.0) {
            return Err(Error::Contract(format!("mask entries must be 0 or 1, found {bad}")));
        }
        let count = mask.sum();
        if count == 0.0 {
            return Err(Error::DegenerateMask);
        }
        let mut total = 0.0;
        let mut sign_mask = Vec::with_capacity(pv.len());
        for ((&p, &t), &m) in pv.data().iter().zip(target.data()).zip(mask.data()) {
            let d = p - t;
            total += m * d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            sign_mask.push(s * m);
        }
        let sign_mask = Matrix::new(pv.rows(), pv.cols(), sign_mask)?;
        let g = self.grad(pred);
        Ok(self.push(
            Matrix::scalar(total / count),
            Op::MaeLoss {
                pred,
                sign_mask,
                count,
            },
            g,
        ))
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = adj[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf | Op::Param => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.grad(*a) {
                        let ga = g.matmul_t(self.value(*b))?;
                        accumulate(&mut adj[a.0], ga);
                    }
                    if self.grad(*b) {
                        let gb = self.value(*a).t_matmul(&g)?;
                        accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).cols();
                    if self.grad(*a) {
                        accumulate(&mut adj[a.0], g.col_range(0, split)?);
                    }
                    if self.grad(*b) {
                        accumulate(&mut adj[b.0], g.col_range(split, g.cols())?);
                    }
                }
                Op::HStack(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let end = start + self.value(*p).cols();
                        if self.grad(*p) {
                            accumulate(&mut adj[p.0], g.col_range(start, end)?);
                        }
                        start = end;
                    }
                }
                Op::Hadamard(a, b) => {
                    if self.grad(*a) {
                        accumulate(&mut adj[a.0], g.hadamard(self.value(*b))?);
                    }
                    if self.grad(*b) {
                        accumulate(&mut adj[b.0], g.hadamard(self.value(*a))?);
                    }
                }
                Op::Add(a, b) => {
                    if self.grad(*a) {
                        accumulate(&mut adj[a.0], g.clone());
                    }
                    if self.grad(*b) {
                        accumulate(&mut adj[b.0], g);
                    }
                }
                Op::Activation(kind, a) => {
                    let ga = Matrix::new(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(node.value.data())
                            .map(|(&g, &y)| g * kind.derivative_from_output(y))
                            .collect(),
                    )?;
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Gate { z, a, b } => {
                    let (zv, av, bv) = (self.value(*z), self.value(*a), self.value(*b));
                    if self.grad(*z) {
                        let gz = g.hadamard(&bv.sub(av)?)?;
                        accumulate(&mut adj[z.0], gz);
                    }
                    if self.grad(*a) {
                        accumulate(&mut adj[a.0], g.hadamard(&zv.map(|z| 1.0 - z))?);
                    }
                    if self.grad(*b) {
                        accumulate(&mut adj[b.0], g.hadamard(zv)?);
                    }
                }
                Op::AddBias(a, bias) => {
                    if self.grad(*bias) {
                        let mut gb = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut adj[bias.0], gb);
                    }
                    if self.grad(*a) {
                        accumulate(&mut adj[a.0], g);
                    }
                }
                Op::Symmetrize(a) => accumulate(&mut adj[a.0], symmetric_part(&g)),
                Op::ScaleShift(a, scale) => accumulate(&mut adj[a.0], g.scale(*scale)),
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut adj[a.0], Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::MaeLoss {
                    pred,
                    sign_mask,
                    count,
                } => {
                    let factor = g.get(0, 0) / count;
                    accumulate(&mut adj[pred.0], sign_mask.scale(factor));
                }
            }
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            params: self.params.clone(),
        })
    }
}

/// `(m + mᵀ) / 2`. Entries `(i, j)` and `(j, i)` are computed from the same
/// two summands, so the result is exactly symmetric.
pub fn symmetric_part(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| (m.get(i, j) + m.get(j, i)) * 0.5)
}
