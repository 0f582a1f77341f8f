//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op applied during a forward pass. Each node keeps
//! its value; [`Graph::gradients`] walks the tape backwards once and returns
//! the adjoint of every node that depends on a differentiable leaf. Values
//! that fan out to several consumers accumulate their adjoints additively.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom, Padding};
use super::params::ParameterSet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op families, used to target fault injection in gradient-check tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    Dense,
    Sigmoid,
    Tanh,
    Add,
    Mul,
    Scale,
    AvgPool,
    Upsample,
    Concat,
    Slice,
    Reshape,
    Sum,
    SumSquares,
    Bce,
    Mse,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    Dense { x: Var, w: Var, b: Var },
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AvgPool { x: Var, r: usize },
    Upsample { x: Var, factor: usize },
    Concat { a: Var, b: Var },
    Slice { x: Var, start: usize },
    Reshape(Var),
    Sum(Var),
    SumSquares(Var),
    Bce { target: Var, pred: Var },
    Mse { target: Var, pred: Var },
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Dense { .. } => OpKind::Dense,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AvgPool { .. } => OpKind::AvgPool,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
            Op::SumSquares(_) => OpKind::SumSquares,
            Op::Bce { .. } => OpKind::Bce,
            Op::Mse { .. } => OpKind::Mse,
        })
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Lower clamp applied to predictions inside the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// Scales the gradient one op family sends to its inputs. Only useful to
/// prove that a gradient check notices a broken backward rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradFault {
    pub op: OpKind,
    pub scale: f64,
}

#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
    fault: Option<GradFault>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: GradFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An unnamed differentiable leaf.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a named parameter as a differentiable leaf. Binding the same
    /// name twice returns the same node.
    pub fn param(&mut self, params: &ParameterSet<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params.value(name)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = kernels::conv_geom(self.value(x), self.value(k), self.value(b), stride, padding)?;
        let out = kernels::conv2d_with(&geom, self.value(x), self.value(k), self.value(b));
        let rg = self.rg(x) || self.rg(k) || self.rg(b);
        Ok(self.push(out, Op::Conv2d { x, k, b, geom }, rg))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = kernels::dense(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Dense { x, w, b }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, "operand", format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Elementwise mean of equally shaped operands.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero operands".into()))?;
        if rest.is_empty() {
            return Ok(first);
        }
        let mut acc = first;
        for &x in rest {
            acc = self.add(acc, x)?;
        }
        Ok(self.scale(acc, T::one() / T::lit(xs.len() as f64)))
    }

    pub fn avg_pool(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = kernels::downsample_avg(self.value(x), r)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AvgPool { x, r }, rg))
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = kernels::upsample_nearest(self.value(x), factor)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample { x, factor }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Slice { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, [n])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(T::lit(s)), Op::Sum(x), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64() * v.as_f64()).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(T::lit(s)), Op::SumSquares(x), rg)
    }

    /// Binary cross entropy averaged over every element. Predictions are
    /// clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
    pub fn bce(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.same_shape("bce_loss", target, pred)?;
        let (x, p) = (self.value(target).data(), self.value(pred).data());
        let n = x.len() as f64;
        let mut acc = 0.0f64;
        for (&xv, &pv) in x.iter().zip(p) {
            let (xv, pv) = (xv.as_f64(), clamp_prob(pv.as_f64()));
            acc += xv * pv.ln() + (1.0 - xv) * (1.0 - pv).ln();
        }
        let rg = self.rg(target) || self.rg(pred);
        Ok(self.push(Tensor::scalar(T::lit(-acc / n)), Op::Bce { target, pred }, rg))
    }

    /// Mean squared elementwise difference.
    pub fn mse(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.same_shape("mse_loss", target, pred)?;
        let (x, p) = (self.value(target).data(), self.value(pred).data());
        let n = x.len() as f64;
        let acc: f64 = x
            .iter()
            .zip(p)
            .map(|(&a, &b)| {
                let d = b.as_f64() - a.as_f64();
                d * d
            })
            .sum();
        let rg = self.rg(target) || self.rg(pred);
        Ok(self.push(Tensor::scalar(T::lit(acc / n)), Op::Mse { target, pred }, rg))
    }

    /// Runs the backward sweep from a scalar node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", "loss", format!("loss must be scalar, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            let contributions = self.node_backward(node, &gout);
            grads[i] = Some(gout);
            let fault = match (self.fault, node.op.kind()) {
                (Some(f), Some(k)) if f.op == k => Some(T::lit(f.scale)),
                _ => None,
            };
            for (v, mut g) in contributions {
                if !self.rg(v) {
                    continue;
                }
                if let Some(s) = fault {
                    g = g.map(|x| x * s);
                }
                accumulate(&mut grads[v.0], g);
            }
        }
        Ok(Gradients { grads })
    }

    /// Adds d(loss)/d(param) into the gradient slot of every parameter bound
    /// on this graph. Calling it repeatedly keeps accumulating.
    pub fn backward(&self, loss: Var, params: &mut ParameterSet<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (name, v) in &self.param_order {
            if let Some(g) = grads.get(*v) {
                params.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn node_backward(&self, node: &Node<T>, gout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, k, b, geom } => {
                let want = [self.rg(*x), self.rg(*k), self.rg(*b)];
                let [dx, dk, db] = kernels::conv2d_backward(geom, val(*x), val(*k), gout, want);
                collect([(*x, dx), (*k, dk), (*b, db)])
            }
            Op::Dense { x, w, b } => {
                let want = [self.rg(*x), self.rg(*w), self.rg(*b)];
                let [dx, dw, db] = kernels::dense_backward(val(*x), val(*w), gout, want);
                collect([(*x, dx), (*w, dw), (*b, db)])
            }
            Op::Sigmoid(x) => {
                let g = zip_map(gout, &node.value, |g, y| g * y * (T::one() - y));
                vec![(*x, g)]
            }
            Op::Tanh(x) => {
                let g = zip_map(gout, &node.value, |g, y| g * (T::one() - y * y));
                vec![(*x, g)]
            }
            Op::Add(a, b) => vec![(*a, gout.clone()), (*b, gout.clone())],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if self.rg(*a) {
                    out.push((*a, zip_map(gout, val(*b), |g, y| g * y)));
                }
                if self.rg(*b) {
                    out.push((*b, zip_map(gout, val(*a), |g, y| g * y)));
                }
                out
            }
            Op::Scale(a, c) => vec![(*a, gout.map(|g| g * *c))],
            Op::AvgPool { x, r } => vec![(*x, kernels::downsample_avg_backward(gout, val(*x).shape(), *r))],
            Op::Upsample { x, factor } => {
                vec![(*x, kernels::upsample_nearest_backward(gout, val(*x).shape(), *factor))]
            }
            Op::Concat { a, b } => {
                let ca = val(*a).shape()[2];
                let cb = val(*b).shape()[2];
                let mut out = Vec::with_capacity(2);
                if self.rg(*a) {
                    out.push((*a, gout.slice_channels(0, ca).expect("concat grad")));
                }
                if self.rg(*b) {
                    out.push((*b, gout.slice_channels(ca, cb).expect("concat grad")));
                }
                out
            }
            Op::Slice { x, start } => {
                vec![(*x, kernels::slice_channels_backward(gout, val(*x).shape(), *start))]
            }
            Op::Reshape(x) => vec![(*x, gout.reshape(val(*x).shape().to_vec()).expect("reshape grad"))],
            Op::Sum(x) => {
                let g = gout.data()[0];
                vec![(*x, Tensor::full(val(*x).shape().to_vec(), g))]
            }
            Op::SumSquares(x) => {
                let g = gout.data()[0] * T::lit(2.0);
                vec![(*x, val(*x).map(|v| v * g))]
            }
            Op::Bce { target, pred } => {
                let (xs, ps) = (val(*target), val(*pred));
                let scale = gout.data()[0].as_f64() / xs.len() as f64;
                let mut out = Vec::with_capacity(2);
                if self.rg(*pred) {
                    let g = zip_map(xs, ps, |x, p| {
                        let (x, p) = (x.as_f64(), p.as_f64());
                        if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                            return T::zero();
                        }
                        T::lit(-scale * (x / p - (1.0 - x) / (1.0 - p)))
                    });
                    out.push((*pred, g));
                }
                if self.rg(*target) {
                    let g = ps.map(|p| {
                        let p = clamp_prob(p.as_f64());
                        T::lit(-scale * (p.ln() - (1.0 - p).ln()))
                    });
                    out.push((*target, g));
                }
                out
            }
            Op::Mse { target, pred } => {
                let (xs, ps) = (val(*target), val(*pred));
                let scale = T::lit(2.0 * gout.data()[0].as_f64() / xs.len() as f64);
                let d = zip_map(ps, xs, |p, x| scale * (p - x));
                let mut out = Vec::with_capacity(2);
                if self.rg(*target) {
                    out.push((*target, d.map(|v| -v)));
                }
                if self.rg(*pred) {
                    out.push((*pred, d));
                }
                out
            }
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

fn collect<T, const N: usize>(items: [(Var, Option<Tensor<T>>); N]) -> Vec<(Var, Tensor<T>)> {
    items.into_iter().filter_map(|(v, g)| g.map(|g| (v, g))).collect()
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shape")
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}
