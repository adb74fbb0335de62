//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and the indices of its
//! inputs. [`Tape::backward`] walks the nodes in reverse and accumulates
//! vector-Jacobian products. A tape is built fresh for each forward pass.

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
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
    MatMul(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Softplus(Var),
    Mean(Vec<Var>),
    Dot(Var, Var),
    Cosine(Var, Var, f64),
    Stack(Vec<Var>),
    SoftmaxNll {
        scores: Var,
        target: usize,
        tau: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient for `v`, zero-filled when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.lens[v.0]])
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// First entry of the node's value; intended for scalar nodes.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · x` for a matrix `a` and a vector `x`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let xv = self.value(x);
        if xv.shape() != [k] {
            return Err(Error::dim(format!(
                "matvec of {:?} and {:?}",
                self.value(a).shape(),
                xv.shape()
            )));
        }
        let out = tensor::matmul_raw(self.value(a).values(), xv.values(), m, k, 1);
        let rg = self.rg(&[a, x]);
        Ok(self.push(Tensor::vector(out), Op::MatVec(a, x), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{what} of {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    fn map_binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let vals = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), vals).expect("shape preserved");
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg)
    }

    fn map_unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let vals = ta.values().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), vals).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.map_binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.map_binary(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map_unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Sigmoid(a), tensor::sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Softplus(a), tensor::softplus)
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items
            .first()
            .ok_or_else(|| Error::dim("mean of zero tensors"))?;
        for &v in &items[1..] {
            self.same_shape(first, v, "mean")?;
        }
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &v in items {
            acc.iter_mut()
                .zip(self.value(v).values())
                .for_each(|(a, x)| *a += x);
        }
        let inv = 1.0 / items.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        let rg = self.rg(items);
        Ok(self.push(
            Tensor::new(shape, acc).expect("shape preserved"),
            Op::Mean(items.to_vec()),
            rg,
        ))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        let d = tensor::dot(self.value(a).values(), self.value(b).values());
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(d), Op::Dot(a, b), rg))
    }

    /// Cosine similarity; exactly zero (with zero gradient) when either norm is below `eps`.
    pub fn cosine(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        let c = tensor::cosine_sim(self.value(a).values(), self.value(b).values(), eps)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b, eps), rg))
    }

    /// Gathers scalar nodes into one vector.
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::dim("stack of zero scalars"));
        }
        let mut vals = Vec::with_capacity(items.len());
        for &v in items {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::dim(format!(
                    "stack expects scalars, got {:?}",
                    t.shape()
                )));
            }
            vals.push(t.values()[0]);
        }
        let rg = self.rg(items);
        Ok(self.push(Tensor::vector(vals), Op::Stack(items.to_vec()), rg))
    }

    pub fn softmax_nll(&mut self, scores: Var, target: usize, tau: f64) -> Result<Var> {
        let s = self.value(scores);
        if s.shape().len() != 1 {
            return Err(Error::dim(format!("softmax over shape {:?}", s.shape())));
        }
        let loss = tensor::softmax_nll(s.values(), target, tau)?;
        let rg = self.rg(&[scores]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxNll {
                scores,
                target,
                tau,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(Error::dim(format!(
                "backward from non-scalar of shape {:?}",
                self.value(output).shape()
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let lens = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { grads, lens })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, contrib: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            contrib(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2().expect("checked on forward");
                let (_, n) = tb.dims2().expect("checked on forward");
                // dA = dC · Bᵀ
                acc(*a, &|da| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * tb.values()[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                });
                // dB = Aᵀ · dC
                acc(*b, &|db| {
                    for i in 0..m {
                        for p in 0..k {
                            let aip = ta.values()[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::MatVec(a, x) => {
                let (ta, tx) = (self.value(*a), self.value(*x));
                let (m, k) = ta.dims2().expect("checked on forward");
                acc(*a, &|da| {
                    for i in 0..m {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        for (d, xv) in da[i * k..(i + 1) * k].iter_mut().zip(tx.values()) {
                            *d += gi * xv;
                        }
                    }
                });
                acc(*x, &|dx| {
                    for i in 0..m {
                        let gi = g[i];
                        for (d, av) in dx.iter_mut().zip(&ta.values()[i * k..(i + 1) * k]) {
                            *d += gi * av;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                acc(*a, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g));
            }
            Op::Sigmoid(a) => {
                let y = node.value.values();
                acc(*a, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Softplus(a) => {
                let x = self.value(*a).values();
                acc(*a, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * tensor::sigmoid(x[i]);
                    }
                });
            }
            Op::Mean(items) => {
                let inv = 1.0 / items.len() as f64;
                for &v in items {
                    acc(v, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += inv * g));
                }
            }
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                acc(*a, &|d| {
                    d.iter_mut().zip(vb).for_each(|(d, y)| *d += g[0] * y)
                });
                acc(*b, &|d| {
                    d.iter_mut().zip(va).for_each(|(d, x)| *d += g[0] * x)
                });
            }
            Op::Cosine(a, b, eps) => {
                let (u, v) = (self.value(*a).values(), self.value(*b).values());
                let (nu, nv) = (tensor::norm(u), tensor::norm(v));
                if nu < *eps || nv < *eps {
                    return;
                }
                let c = node.value.values()[0];
                let inv = 1.0 / (nu * nv);
                // dc/du = v/(|u||v|) - c·u/|u|²
                acc(*a, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[0] * (v[i] * inv - c * u[i] / (nu * nu));
                    }
                });
                acc(*b, &|d| {
                    for i in 0..d.len() {
                        d[i] += g[0] * (u[i] * inv - c * v[i] / (nv * nv));
                    }
                });
            }
            Op::Stack(items) => {
                for (i, &v) in items.iter().enumerate() {
                    acc(v, &|d| d[0] += g[i]);
                }
            }
            Op::SoftmaxNll {
                scores,
                target,
                tau,
            } => {
                let s = self.value(*scores).values();
                let (_, probs) = tensor::log_softmax_parts(s, *tau);
                acc(*scores, &|d| {
                    for k in 0..d.len() {
                        let ind = if k == *target { 1.0 } else { 0.0 };
                        d[k] += g[0] * (probs[k] - ind) / tau;
                    }
                });
            }
        }
    }
}
