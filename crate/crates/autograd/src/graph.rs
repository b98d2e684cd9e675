use std::collections::HashMap;
use std::fmt;

use crate::ops::{conv, deform, resample};
use crate::{ParamId, ParamStore, Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether layers with train/eval behaviour (batch norm) use batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable operation implemented outside this crate.
///
/// `backward` receives the forward inputs, the forward output and the
/// gradient w.r.t. the output, and returns one optional gradient per input.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Tensor<T>;
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvT { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, out_pad: usize },
    Depthwise { x: Var, k: Var, pad: usize },
    Deform { x: Var, off: Var, mask: Var, w: Var, b: Option<Var>, groups: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulChan { x: Var, s: Var },
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Pow(Var, f64),
    LowerBound(Var, f64),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    Upsample2(Var),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, invstd: Vec<T>, batch: bool },
    Sum(Var),
    Mean(Var),
    Custom { op: Box<dyn CustomOp<T>>, inputs: Vec<Var> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of operations. Values of every node are kept until the graph is dropped.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    mode: Mode,
    buffer_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Real> fmt::Debug for Graph<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("mode", &self.mode)
            .finish()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            mode,
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf (used for input gradients in checks).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; repeated calls reuse one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let e = self.params.entry(id);
        let v = self.push(e.value.clone(), Op::Leaf, e.trainable);
        self.param_vars.insert(id, v);
        v
    }

    /// Copies a value into a fresh non-differentiable leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn queue_buffer_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.push((id, value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        self.push(out, Op::Conv { x, w, b, stride, pad }, rg)
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Var {
        let out = conv::conv_transpose2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
            out_pad,
        );
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        self.push(out, Op::ConvT { x, w, b, stride, pad, out_pad }, rg)
    }

    /// Per-sample, per-channel kernels `k: [n, c, kh, kw]`.
    pub fn depthwise_dyn(&mut self, x: Var, k: Var, pad: usize) -> Var {
        let out = conv::depthwise_dyn(self.value(x), self.value(k), pad);
        let rg = self.rg(&[x, k]);
        self.push(out, Op::Depthwise { x, k, pad }, rg)
    }

    pub fn deform_conv2d(&mut self, x: Var, off: Var, mask: Var, w: Var, b: Option<Var>, groups: usize) -> Var {
        let out = deform::deform_conv2d(
            self.value(x),
            self.value(off),
            self.value(mask),
            self.value(w),
            b.map(|b| self.value(b)),
            groups,
        );
        let rg = self.rg(&[x, off, mask, w]) || b.is_some_and(|b| self.requires_grad(b));
        self.push(out, Op::Deform { x, off, mask, w, b, groups }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Div(a, b), rg)
    }

    /// `x: [n, c, h, w]` scaled by per-channel `s: [n, c, 1, 1]`.
    pub fn mul_channels(&mut self, x: Var, s: Var) -> Var {
        let [n, c, _, _] = self.shape(x);
        assert_eq!(self.shape(s), [n, c, 1, 1], "mul_channels scale shape");
        let p = self.value(x).plane();
        let mut out = self.value(x).clone();
        let sv = self.value(s).data().to_vec();
        for (i, chunk) in out.data_mut().chunks_mut(p).enumerate() {
            let k = sv[i];
            for v in chunk {
                *v *= k;
            }
        }
        let rg = self.rg(&[x, s]);
        self.push(out, Op::MulChan { x, s }, rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let kk = T::from_f64(k);
        let out = self.value(x).map(|v| v * kk);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, k), rg)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let kk = T::from_f64(k);
        let out = self.value(x).map(|v| v + kk);
        let rg = self.rg(&[x]);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        let out = self.value(x).map(|v| if v > T::ZERO { v } else { v * s });
        let rg = self.rg(&[x]);
        self.push(out, Op::LeakyRelu(x, slope), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::ZERO));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        let rg = self.rg(&[x]);
        self.push(out, Op::Softplus(x), rg)
    }

    pub fn pow(&mut self, x: Var, p: f64) -> Var {
        let pp = T::from_f64(p);
        let out = self.value(x).map(|v| v.powf(pp));
        let rg = self.rg(&[x]);
        self.push(out, Op::Pow(x, p), rg)
    }

    /// `max(x, bound)`; the gradient still flows below the bound when it
    /// points upward, so clamped values can recover during training.
    pub fn lower_bound(&mut self, x: Var, bound: f64) -> Var {
        let b = T::from_f64(bound);
        let out = self.value(x).map(|v| v.max(b));
        let rg = self.rg(&[x]);
        self.push(out, Op::LowerBound(x, bound), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let ts: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::cat_channels(&ts);
        let rg = self.rg(parts);
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_channels(start, len);
        let rg = self.rg(&[x]);
        self.push(out, Op::Slice { x, start }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: [usize; 4]) -> Var {
        let out = self.value(x).clone().reshape(shape);
        let rg = self.rg(&[x]);
        self.push(out, Op::Reshape(x), rg)
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let out = resample::upsample2(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::Upsample2(x), rg)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let out = resample::avg_pool2(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::AvgPool2(x), rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let out = resample::global_avg_pool(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::GlobalAvgPool(x), rg)
    }

    /// Batch normalisation over `(n, h, w)`. Returns the output together with the
    /// per-channel mean and variance used (batch statistics when `running` is `None`).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&Tensor<T>, &Tensor<T>)>,
        eps: f64,
    ) -> (Var, Vec<T>, Vec<T>) {
        let xv = self.value(x);
        let [n, c, _, _] = xv.shape();
        let p = xv.plane();
        let cnt = T::from_f64((n * p) as f64);
        let (mean, var) = match running {
            Some((m, v)) => (m.data().to_vec(), v.data().to_vec()),
            None => {
                let mut mean = vec![T::ZERO; c];
                let mut var = vec![T::ZERO; c];
                for ch in 0..c {
                    let mut s = T::ZERO;
                    for b in 0..n {
                        s += xv.item(b)[ch * p..(ch + 1) * p].iter().copied().sum::<T>();
                    }
                    let m = s / cnt;
                    let mut q = T::ZERO;
                    for b in 0..n {
                        for &v in &xv.item(b)[ch * p..(ch + 1) * p] {
                            q += (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = q / cnt;
                }
                (mean, var)
            }
        };
        let invstd: Vec<T> = var.iter().map(|&v| T::ONE / (v + T::from_f64(eps)).sqrt()).collect();
        let mut xhat = xv.clone();
        for (i, chunk) in xhat.data_mut().chunks_mut(p).enumerate() {
            let ch = i % c;
            for v in chunk {
                *v = (*v - mean[ch]) * invstd[ch];
            }
        }
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let mut out = xhat.clone();
        for (i, chunk) in out.data_mut().chunks_mut(p).enumerate() {
            let ch = i % c;
            for v in chunk {
                *v = *v * gv[ch] + bv[ch];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let batch = running.is_none();
        let y = self.push(out, Op::BatchNorm { x, gamma, beta, xhat, invstd, batch }, rg);
        (y, mean, var)
    }

    /// Sum of all elements as a `[1,1,1,1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / T::from_f64(t.len() as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var]) -> Var {
        let ts: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&ts);
        let rg = self.rg(inputs);
        self.push(out, Op::Custom { op, inputs: inputs.to_vec() }, rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        self.backward_with(loss, Tensor::full(self.shape(loss), T::ONE))
    }

    /// Reverse pass seeded with an arbitrary output gradient.
    pub fn backward_with(&self, out: Var, seed: Tensor<T>) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let acc = |v: Var, d: Tensor<T>, grads: &mut [Option<Tensor<T>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, stride, pad } => {
                let r = conv::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.requires_grad(*x),
                );
                if let Some(dx) = r.dx {
                    acc(*x, dx, grads);
                }
                acc(*w, r.dw, grads);
                if let Some(b) = b {
                    acc(*b, r.db, grads);
                }
            }
            Op::ConvT { x, w, b, stride, pad, out_pad } => {
                let r = conv::conv_transpose2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    *out_pad,
                    self.requires_grad(*x),
                );
                if let Some(dx) = r.dx {
                    acc(*x, dx, grads);
                }
                acc(*w, r.dw, grads);
                if let Some(b) = b {
                    acc(*b, r.db, grads);
                }
            }
            Op::Depthwise { x, k, pad } => {
                let (dx, dk) = conv::depthwise_dyn_backward(self.value(*x), self.value(*k), g, *pad);
                acc(*x, dx, grads);
                acc(*k, dk, grads);
            }
            Op::Deform { x, off, mask, w, b, groups } => {
                let r = deform::deform_conv2d_backward(
                    self.value(*x),
                    self.value(*off),
                    self.value(*mask),
                    self.value(*w),
                    g,
                    *groups,
                );
                acc(*x, r.dx, grads);
                acc(*off, r.doff, grads);
                acc(*mask, r.dmask, grads);
                acc(*w, r.dw, grads);
                if let Some(b) = b {
                    acc(*b, r.db, grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.map(|v| -v), grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |gv, y| gv * y), grads);
                acc(*b, g.zip_map(av, |gv, x| gv * x), grads);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |gv, y| gv / y), grads);
                let mut db = g.zip_map(av, |gv, x| gv * x);
                for (d, &y) in db.data_mut().iter_mut().zip(bv.data()) {
                    *d = -*d / (y * y);
                }
                acc(*b, db, grads);
            }
            Op::MulChan { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let p = xv.plane();
                let mut dx = g.clone();
                let mut ds = Tensor::zeros(sv.shape());
                for (i, (dchunk, xchunk)) in dx.data_mut().chunks_mut(p).zip(xv.data().chunks(p)).enumerate() {
                    let k = sv.data()[i];
                    let mut acc_s = T::ZERO;
                    for (d, &xx) in dchunk.iter_mut().zip(xchunk) {
                        acc_s += *d * xx;
                        *d *= k;
                    }
                    ds.data_mut()[i] = acc_s;
                }
                acc(*x, dx, grads);
                acc(*s, ds, grads);
            }
            Op::Scale(x, k) => {
                let kk = T::from_f64(*k);
                acc(*x, g.map(|v| v * kk), grads);
            }
            Op::AddScalar(x) => acc(*x, g.clone(), grads),
            Op::LeakyRelu(x, slope) => {
                let s = T::from_f64(*slope);
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > T::ZERO { gv } else { gv * s });
                acc(*x, d, grads);
            }
            Op::Relu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > T::ZERO { gv } else { T::ZERO });
                acc(*x, d, grads);
            }
            Op::Sigmoid(x) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y * (T::ONE - y));
                acc(*x, d, grads);
            }
            Op::Softplus(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(xv));
                acc(*x, d, grads);
            }
            Op::Pow(x, p) => {
                let pp = T::from_f64(*p);
                let pm1 = T::from_f64(*p - 1.0);
                let d = g.zip_map(self.value(*x), |gv, xv| gv * pp * xv.powf(pm1));
                acc(*x, d, grads);
            }
            Op::LowerBound(x, bound) => {
                let b = T::from_f64(*bound);
                let d = g.zip_map(self.value(*x), |gv, xv| {
                    if xv >= b || gv < T::ZERO {
                        gv
                    } else {
                        T::ZERO
                    }
                });
                acc(*x, d, grads);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.requires_grad(p) {
                        acc(p, g.slice_channels(start, c), grads);
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let xs = self.shape(*x);
                let len = g.shape()[1];
                let [n, c, h, w] = xs;
                let p = h * w;
                let mut d = Tensor::zeros(xs);
                for b in 0..n {
                    let dst = &mut d.data_mut()[(b * c + start) * p..(b * c + start + len) * p];
                    dst.copy_from_slice(g.item(b));
                }
                acc(*x, d, grads);
            }
            Op::Reshape(x) => acc(*x, g.clone().reshape(self.shape(*x)), grads),
            Op::Upsample2(x) => acc(*x, resample::upsample2_backward(self.shape(*x), g), grads),
            Op::AvgPool2(x) => acc(*x, resample::avg_pool2_backward(self.shape(*x), g), grads),
            Op::GlobalAvgPool(x) => acc(*x, resample::global_avg_pool_backward(self.shape(*x), g), grads),
            Op::BatchNorm { x, gamma, beta, xhat, invstd, batch } => {
                let [n, c, _, _] = xhat.shape();
                let p = xhat.plane();
                let gamma_v = self.value(*gamma).data();
                let mut dgamma = vec![T::ZERO; c];
                let mut dbeta = vec![T::ZERO; c];
                for b in 0..n {
                    for ch in 0..c {
                        let o = (b * c + ch) * p;
                        for j in 0..p {
                            dgamma[ch] += g.data()[o + j] * xhat.data()[o + j];
                            dbeta[ch] += g.data()[o + j];
                        }
                    }
                }
                if self.requires_grad(*x) {
                    let mut dx = Tensor::zeros(xhat.shape());
                    let cnt = T::from_f64((n * p) as f64);
                    for b in 0..n {
                        for ch in 0..c {
                            let o = (b * c + ch) * p;
                            for j in 0..p {
                                let gv = g.data()[o + j];
                                dx.data_mut()[o + j] = if *batch {
                                    gamma_v[ch] * invstd[ch] * (gv - dbeta[ch] / cnt - xhat.data()[o + j] * dgamma[ch] / cnt)
                                } else {
                                    gamma_v[ch] * invstd[ch] * gv
                                };
                            }
                        }
                    }
                    acc(*x, dx, grads);
                }
                acc(*gamma, Tensor::from_vec(self.shape(*gamma), dgamma), grads);
                acc(*beta, Tensor::from_vec(self.shape(*beta), dbeta), grads);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                acc(*x, Tensor::full(self.shape(*x), gv), grads);
            }
            Op::Mean(x) => {
                let s = self.shape(*x);
                let gv = g.data()[0] / T::from_f64(s.iter().product::<usize>() as f64);
                acc(*x, Tensor::full(s, gv), grads);
            }
            Op::Custom { op, inputs } => {
                let ts: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let ds = op.backward(&ts, &node.value, g);
                assert_eq!(ds.len(), inputs.len(), "custom op {} returned wrong gradient count", op.name());
                for (&v, d) in inputs.iter().zip(ds) {
                    if let Some(d) = d {
                        acc(v, d, grads);
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log(1 + e^-|x|)
    let ax = if x >= T::ZERO { x } else { -x };
    x.max(T::ZERO) + (T::ONE + (-ax).exp()).ln()
}

/// Result of a reverse pass.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.param_vars.get(&id).and_then(|&v| self.wrt(v))
    }

    /// Gradients of every parameter touched by the graph, in parameter order.
    pub fn params(&self) -> Vec<(ParamId, &Tensor<T>)> {
        let mut out: Vec<_> = self
            .param_vars
            .iter()
            .filter_map(|(&id, &v)| self.wrt(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
