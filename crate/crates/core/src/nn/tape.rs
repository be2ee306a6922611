//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order, so [`Tape::backward`] is a single reverse sweep.
//! Shape errors inside tape ops are programming errors and panic; the public
//! layer and network builders validate user-facing shapes up front.

use super::kernels;
use super::tensor::Tensor;
use crate::{Error, Result};
use std::rc::Rc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Linear map that equals its own adjoint, so the same closure serves for
/// forward and backward.
pub type SelfAdjointMap = Rc<dyn Fn(&[f64]) -> Vec<f64>>;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, Var),
    MulConst(Var, f64),
    Dot(Var, Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Matmul(Var, Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, k: usize },
    Relu(Var),
    Silu(Var),
    GroupNorm { x: Var, stats: Vec<(f64, f64)> },
    MulChannel(Var, Var),
    AddChannel(Var, Var),
    Concat(Vec<Var>),
    AvgPool2(Var),
    Upsample2(Var),
    Index(Var, usize),
    SelfAdjoint(Var, SelfAdjointMap),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the leaves that required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `v` has no path to the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`get`](Self::get) but a missing path is an error.
    pub fn require(&self, v: Var) -> Result<&[f64]> {
        self.get(v)
            .ok_or_else(|| Error::invalid(format!("variable {} is detached from the loss", v.0)))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{what}: operand shapes differ"
        );
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data);
        let ng = self.ng(&[a, b]);
        self.push(t, op, ng)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let va = self.value(a);
        let t = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| f(*x)).collect());
        let ng = self.ng(&[a]);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        self.zip_map(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "div");
        self.zip_map(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Tensor times a one-element tensor.
    pub fn scale(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let va = self.value(a);
        let t = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x * sv).collect());
        let ng = self.ng(&[a, s]);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::MulConst(a, c), |x| x * c)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "dot");
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        let ng = self.ng(&[a, b]);
        self.push(Tensor::scalar(s), Op::Dot(a, b), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mse");
        let va = self.value(a);
        let s = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / va.len() as f64;
        let ng = self.ng(&[a, b]);
        self.push(Tensor::scalar(s), Op::Mse(a, b), ng)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(
            va.shape().len() == 2 && vb.shape().len() == 2,
            "matmul needs 2-D operands"
        );
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        assert_eq!(vb.shape()[0], k, "matmul: inner dimensions differ");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = va.data()[i * k + p];
                let brow = &vb.data()[p * n..(p + 1) * n];
                for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let ng = self.ng(&[a, b]);
        self.push(Tensor::new(vec![m, n], out), Op::Matmul(a, b), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let t = Tensor::new(shape, self.value(a).data().to_vec());
        let ng = self.ng(&[a]);
        self.push(t, Op::Reshape(a), ng)
    }

    /// Stride-1 zero-padded convolution. `x: [Cin,H,W]`, `w: [Cout,Cin,k,k]`,
    /// `b: [Cout]`; `k` must be odd.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (cin, h, wd) = self.value(x).chw();
        let ws = self.value(w).shape().to_vec();
        assert!(
            ws.len() == 4 && ws[1] == cin && ws[2] == ws[3] && ws[2] % 2 == 1,
            "conv2d weight shape {ws:?}"
        );
        let (cout, k) = (ws[0], ws[2]);
        let bias = b.map(|b| {
            assert_eq!(self.value(b).len(), cout, "conv2d bias length");
            self.value(b).data()
        });
        let out = kernels::conv2d_forward(self.value(x).data(), cin, h, wd, self.value(w).data(), cout, k, bias);
        let mut parents = vec![x, w];
        parents.extend(b);
        let ng = self.ng(&parents);
        self.push(Tensor::new(vec![cout, h, wd], out), Op::Conv2d { x, w, b, k }, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    /// Group normalization of a `[C,H,W]` tensor without affine parameters.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert!(
            groups > 0 && c % groups == 0,
            "group_norm: {c} channels into {groups} groups"
        );
        let (out, stats) = kernels::group_norm_forward(self.value(x).data(), c, h * w, groups, eps);
        let ng = self.ng(&[x]);
        self.push(Tensor::new(vec![c, h, w], out), Op::GroupNorm { x, stats }, ng)
    }

    /// `x[c,:,:] * a[c]`.
    pub fn mul_channel(&mut self, x: Var, a: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert_eq!(self.value(a).len(), c, "mul_channel: per-channel vector length");
        let hw = h * w;
        let av = self.value(a).data();
        let out = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * av[i / hw])
            .collect();
        let ng = self.ng(&[x, a]);
        self.push(Tensor::new(vec![c, h, w], out), Op::MulChannel(x, a), ng)
    }

    /// `x[c,:,:] + b[c]`.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert_eq!(self.value(b).len(), c, "add_channel: per-channel vector length");
        let hw = h * w;
        let bv = self.value(b).data();
        let out = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i / hw])
            .collect();
        let ng = self.ng(&[x, b]);
        self.push(Tensor::new(vec![c, h, w], out), Op::AddChannel(x, b), ng)
    }

    /// Concatenate `[C_i,H,W]` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let (_, h, w) = self.value(parts[0]).chw();
        let mut c = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pc, ph, pw) = self.value(p).chw();
            assert!(ph == h && pw == w, "concat: spatial dims differ");
            c += pc;
            data.extend_from_slice(self.value(p).data());
        }
        let ng = self.ng(parts);
        self.push(Tensor::new(vec![c, h, w], data), Op::Concat(parts.to_vec()), ng)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let out = kernels::avg_pool2_forward(self.value(x).data(), c, h, w);
        let ng = self.ng(&[x]);
        self.push(Tensor::new(vec![c, h / 2, w / 2], out), Op::AvgPool2(x), ng)
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let out = kernels::upsample2_forward(self.value(x).data(), c, h, w);
        let ng = self.ng(&[x]);
        self.push(Tensor::new(vec![c, 2 * h, 2 * w], out), Op::Upsample2(x), ng)
    }

    /// Element `i` of the flattened tensor as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let v = self.value(a).data()[i];
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(v), Op::Index(a, i), ng)
    }

    /// Apply a fixed self-adjoint linear map to the flattened tensor.
    pub fn self_adjoint(&mut self, a: Var, map: SelfAdjointMap) -> Var {
        let va = self.value(a);
        let out = map(va.data());
        assert_eq!(out.len(), va.len(), "self_adjoint map changed the length");
        let t = Tensor::new(va.shape().to_vec(), out);
        let ng = self.ng(&[a]);
        self.push(t, Op::SelfAdjoint(a, map), ng)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let want = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if want(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if want(*b) {
                    accumulate(grads, *b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    accumulate(grads, *a, g.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                }
                if want(*b) {
                    accumulate(grads, *b, g.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if want(*a) {
                    accumulate(grads, *a, g.iter().zip(vb).map(|(g, y)| g / y).collect());
                }
                if want(*b) {
                    let gb = g
                        .iter()
                        .zip(va.iter().zip(vb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => {
                let sv = val(*s)[0];
                if want(*a) {
                    accumulate(grads, *a, g.iter().map(|g| g * sv).collect());
                }
                if want(*s) {
                    let d = g.iter().zip(val(*a)).map(|(g, x)| g * x).sum();
                    accumulate(grads, *s, vec![d]);
                }
            }
            Op::MulConst(a, c) => {
                if want(*a) {
                    accumulate(grads, *a, g.iter().map(|g| g * c).collect());
                }
            }
            Op::Dot(a, b) => {
                if want(*a) {
                    accumulate(grads, *a, val(*b).iter().map(|y| g[0] * y).collect());
                }
                if want(*b) {
                    accumulate(grads, *b, val(*a).iter().map(|x| g[0] * x).collect());
                }
            }
            Op::Sum(a) => {
                if want(*a) {
                    accumulate(grads, *a, vec![g[0]; val(*a).len()]);
                }
            }
            Op::Mean(a) => {
                if want(*a) {
                    let n = val(*a).len();
                    accumulate(grads, *a, vec![g[0] / n as f64; n]);
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let scale = 2.0 * g[0] / va.len() as f64;
                let d: Vec<f64> = va.iter().zip(vb).map(|(x, y)| scale * (x - y)).collect();
                if want(*b) {
                    accumulate(grads, *b, d.iter().map(|v| -v).collect());
                }
                if want(*a) {
                    accumulate(grads, *a, d);
                }
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if want(*a) {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] = (0..n).map(|j| g[i * n + j] * tb.data()[p * n + j]).sum();
                        }
                    }
                    accumulate(grads, *a, ga);
                }
                if want(*b) {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Reshape(a) => {
                if want(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
            }
            Op::Conv2d { x, w, b, k } => {
                let (cin, h, wd) = self.value(*x).chw();
                let cout = self.value(*w).shape()[0];
                let wants_w = want(*w) || b.is_some_and(want);
                if !want(*x) && !wants_w {
                    return;
                }
                let (gx, gw, gb) = kernels::conv2d_backward(val(*x), cin, h, wd, val(*w), cout, *k, g, want(*x));
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                if want(*w) {
                    accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if want(*b) {
                        accumulate(grads, *b, gb);
                    }
                }
            }
            Op::Relu(a) => {
                if want(*a) {
                    let ga = g
                        .iter()
                        .zip(val(*a))
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(grads, *a, ga);
                }
            }
            Op::Silu(a) => {
                if want(*a) {
                    let ga = g
                        .iter()
                        .zip(val(*a))
                        .map(|(g, x)| {
                            let s = sigmoid(*x);
                            g * s * (1.0 + x * (1.0 - s))
                        })
                        .collect();
                    accumulate(grads, *a, ga);
                }
            }
            Op::GroupNorm { x, stats } => {
                if want(*x) {
                    accumulate(grads, *x, kernels::group_norm_backward(node.value.data(), g, stats));
                }
            }
            Op::MulChannel(x, a) => {
                let (c, h, w) = self.value(*x).chw();
                let hw = h * w;
                let av = val(*a);
                if want(*x) {
                    accumulate(grads, *x, g.iter().enumerate().map(|(i, g)| g * av[i / hw]).collect());
                }
                if want(*a) {
                    let xv = val(*x);
                    let ga = (0..c)
                        .map(|ch| {
                            g[ch * hw..(ch + 1) * hw]
                                .iter()
                                .zip(&xv[ch * hw..(ch + 1) * hw])
                                .map(|(g, x)| g * x)
                                .sum()
                        })
                        .collect();
                    accumulate(grads, *a, ga);
                }
            }
            Op::AddChannel(x, b) => {
                let (c, h, w) = self.value(*x).chw();
                let hw = h * w;
                if want(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
                if want(*b) {
                    let gb = (0..c).map(|ch| g[ch * hw..(ch + 1) * hw].iter().sum()).collect();
                    accumulate(grads, *b, gb);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    if want(*p) {
                        accumulate(grads, *p, g[off..off + len].to_vec());
                    }
                    off += len;
                }
            }
            Op::AvgPool2(x) => {
                if want(*x) {
                    let (c, h, w) = self.value(*x).chw();
                    accumulate(grads, *x, kernels::avg_pool2_backward(g, c, h, w));
                }
            }
            Op::Upsample2(x) => {
                if want(*x) {
                    let (c, h, w) = self.value(*x).chw();
                    accumulate(grads, *x, kernels::upsample2_backward(g, c, h, w));
                }
            }
            Op::Index(a, i) => {
                if want(*a) {
                    let mut ga = vec![0.0; val(*a).len()];
                    ga[*i] = g[0];
                    accumulate(grads, *a, ga);
                }
            }
            Op::SelfAdjoint(a, map) => {
                if want(*a) {
                    accumulate(grads, *a, map(g));
                }
            }
        }
    }
}
