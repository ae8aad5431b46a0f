//! Tensor-level reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value,
//! so node indices are already in topological order. [`Graph::backward`]
//! walks the tape in reverse and accumulates adjoints into every node that
//! depends on a parameter. Graphs are built fresh for each evaluation and
//! never reused across optimizer steps.

use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::tensor::Tensor;
use crate::wavelet;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Conv2d { input: Var, kernel: Var, bias: Option<Var> },
    LeakyRelu(Var, f64),
    PosScale(Var),
    SliceChannels { x: Var, start: usize },
    Concat(Vec<Var>),
    HaarForward(Var),
    HaarInverse(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` does not influence the root or carries no parameter.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.adjoints.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Tensor>, contribution: Tensor) {
    match slot {
        Some(acc) => acc.axpy(1.0, &contribution),
        None => *slot = Some(contribution),
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            va.expect_same_shape(vb, op_name)?;
            va.zip_map(vb, f)?
        };
        let g = self.grad_of(&[a, b]);
        Ok(self.push(value, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Scale(a, factor), g)
    }

    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a).map(|x| x + shift);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Offset(a), g)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Square(a), g)
    }

    /// Subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Abs(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let g = self.grad_of(&[a]);
        self.push(value, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let g = self.grad_of(&[a]);
        self.push(value, Op::Mean(a), g)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let value = ops::conv2d(self.value(input), self.value(kernel), bias.map(|b| self.value(b)))?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let g = self.grad_of(&deps);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias }, g))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = ops::leaky_relu(self.value(x), slope);
        let g = self.grad_of(&[x]);
        self.push(value, Op::LeakyRelu(x, slope), g)
    }

    pub fn pos_scale(&mut self, x: Var) -> Var {
        let value = ops::pos_scale(self.value(x));
        let g = self.grad_of(&[x]);
        self.push(value, Op::PosScale(x), g)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_channels(start, len)?;
        let g = self.grad_of(&[x]);
        Ok(self.push(value, Op::SliceChannels { x, start }, g))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::concat_channels(&tensors)?
        };
        let g = self.grad_of(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), g))
    }

    /// Packed `[A; H; V; D]` Haar analysis.
    pub fn haar_forward(&mut self, x: Var) -> Result<Var> {
        let value = wavelet::haar_forward_packed(self.value(x))?;
        let g = self.grad_of(&[x]);
        Ok(self.push(value, Op::HaarForward(x), g))
    }

    pub fn haar_inverse(&mut self, packed: Var) -> Result<Var> {
        let value = wavelet::haar_inverse_packed(self.value(packed))?;
        let g = self.grad_of(&[packed]);
        Ok(self.push(value, Op::HaarInverse(packed), g))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        for (node, a) in self.nodes.iter().zip(adj.iter_mut()) {
            if !node.needs_grad {
                *a = None;
            }
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let wants = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(v) {
                        accumulate(&mut adj[v.0], g.clone());
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(&mut adj[a.0], g.clone());
                }
                if wants(b) {
                    accumulate(&mut adj[b.0], g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    accumulate(&mut adj[a.0], g.zip_map(self.value(*b), |gv, bv| gv * bv)?);
                }
                if wants(b) {
                    accumulate(&mut adj[b.0], g.zip_map(self.value(*a), |gv, av| gv * av)?);
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                if wants(a) {
                    accumulate(&mut adj[a.0], g.zip_map(vb, |gv, bv| gv / bv)?);
                }
                if wants(b) {
                    // d(a/b)/db = -(a/b) / b
                    let t = g.zip_map(out, |gv, q| -gv * q)?;
                    accumulate(&mut adj[b.0], t.zip_map(vb, |tv, bv| tv / bv)?);
                }
            }
            Op::Scale(a, f) => {
                if wants(a) {
                    accumulate(&mut adj[a.0], g.map(|x| x * f));
                }
            }
            Op::Offset(a) => {
                if wants(a) {
                    accumulate(&mut adj[a.0], g.clone());
                }
            }
            Op::Square(a) => {
                if wants(a) {
                    accumulate(&mut adj[a.0], g.zip_map(self.value(*a), |gv, x| 2.0 * x * gv)?);
                }
            }
            Op::Abs(a) => {
                if wants(a) {
                    let sign = |x: f64| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    };
                    accumulate(&mut adj[a.0], g.zip_map(self.value(*a), |gv, x| gv * sign(x))?);
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                if wants(a) {
                    let shape = self.shape(*a);
                    let mut gv = g.data()[0];
                    if matches!(op, Op::Mean(_)) {
                        gv /= self.value(*a).len() as f64;
                    }
                    accumulate(&mut adj[a.0], Tensor::full(shape, gv));
                }
            }
            Op::Conv2d { input, kernel, bias } => {
                let grads = ops::conv2d_backward(self.value(*input), self.value(*kernel), g)?;
                if wants(input) {
                    accumulate(&mut adj[input.0], grads.input);
                }
                if wants(kernel) {
                    accumulate(&mut adj[kernel.0], grads.kernel);
                }
                if let Some(b) = bias {
                    if wants(b) {
                        let gb = grads.bias.reshape(self.shape(*b))?;
                        accumulate(&mut adj[b.0], gb);
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                if wants(x) {
                    accumulate(&mut adj[x.0], ops::leaky_relu_backward(self.value(*x), *slope, g));
                }
            }
            Op::PosScale(x) => {
                if wants(x) {
                    accumulate(&mut adj[x.0], ops::pos_scale_backward(self.value(*x), out, g));
                }
            }
            Op::SliceChannels { x, start } => {
                if wants(x) {
                    let src = self.value(*x);
                    let (_, h, w) = src.dims3()?;
                    let mut full = Tensor::zeros(src.shape());
                    let off = start * h * w;
                    full.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                    accumulate(&mut adj[x.0], full);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = self.shape(*p)[0];
                    if wants(p) {
                        accumulate(&mut adj[p.0], g.slice_channels(off, c)?);
                    }
                    off += c;
                }
            }
            // The packed Haar matrix is orthogonal and symmetric per block,
            // so each transform's adjoint is the other one.
            Op::HaarForward(x) => {
                if wants(x) {
                    accumulate(&mut adj[x.0], wavelet::haar_inverse_packed(g)?);
                }
            }
            Op::HaarInverse(p) => {
                if wants(p) {
                    accumulate(&mut adj[p.0], wavelet::haar_forward_packed(g)?);
                }
            }
        }
        Ok(())
    }
}
