//! Parameterised layers. Layers only hold [`ParamId`]s; values live in a [`ParamStore`].

use rand::{Rng, RngCore};

use crate::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Registers named parameters under a dotted prefix.
pub struct ParamBuilder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut dyn RngCore,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut dyn RngCore) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Child builder whose parameter names are prefixed with `name.`.
    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn uniform(&mut self, name: &str, shape: [usize; 4], bound: f64) -> ParamId {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..=bound)));
        let n = self.full_name(name);
        self.store.add(n, t, true)
    }

    pub fn constant(&mut self, name: &str, shape: [usize; 4], v: f64, trainable: bool) -> ParamId {
        let n = self.full_name(name);
        self.store.add(n, Tensor::full(shape, T::from_f64(v)), trainable)
    }

    pub fn tensor(&mut self, name: &str, t: Tensor<T>, trainable: bool) -> ParamId {
        let n = self.full_name(name);
        self.store.add(n, t, trainable)
    }

    pub fn rng(&mut self) -> &mut dyn RngCore {
        self.rng
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// `k×k` convolution with "same"-style padding `k / 2`.
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let mut pb = pb.sub(name);
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        Conv2d {
            weight: pb.uniform("weight", [cout, cin, k, k], bound),
            bias: pb.uniform("bias", [cout, 1, 1, 1], bound),
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Transposed convolution upsampling by `stride` (output padding `stride - 1`).
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let mut pb = pb.sub(name);
        let bound = 1.0 / ((cout * k * k) as f64).sqrt();
        ConvTranspose2d {
            weight: pb.uniform("weight", [cin, cout, k, k], bound),
            bias: pb.uniform("bias", [cout, 1, 1, 1], bound),
            stride,
            pad: k / 2,
            out_pad: stride - 1,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv_transpose2d(x, w, Some(b), self.stride, self.pad, self.out_pad)
    }
}

/// Fully connected layer on `[n, d, 1, 1]` vectors.
#[derive(Clone, Debug)]
pub struct Linear {
    inner: Conv2d,
}

impl Linear {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, din: usize, dout: usize) -> Self {
        Linear {
            inner: Conv2d::new(pb, name, din, dout, 1, 1),
        }
    }

    pub fn weight(&self) -> ParamId {
        self.inner.weight
    }

    pub fn bias(&self) -> ParamId {
        self.inner.bias
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let [_, _, h, w] = g.shape(x);
        assert!(h == 1 && w == 1, "linear expects [n, d, 1, 1]");
        self.inner.forward(g, x)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, c: usize) -> Self {
        let mut pb = pb.sub(name);
        BatchNorm2d {
            gamma: pb.constant("gamma", [c, 1, 1, 1], 1.0, true),
            beta: pb.constant("beta", [c, 1, 1, 1], 0.0, true),
            running_mean: pb.constant("running_mean", [c, 1, 1, 1], 0.0, false),
            running_var: pb.constant("running_var", [c, 1, 1, 1], 1.0, false),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Batch statistics in train mode (queuing a running-stat update), running statistics in eval mode.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        if g.is_training() {
            let count = {
                let [n, _, h, w] = g.shape(x);
                n * h * w
            };
            let (y, mean, var) = g.batch_norm(x, gamma, beta, None, self.eps);
            let ps = g.params();
            let m = T::from_f64(self.momentum);
            let unbias = T::from_f64(count as f64 / (count.max(2) - 1) as f64);
            let rm = ps.get(self.running_mean).data().iter().zip(&mean).map(|(&r, &b)| r + m * (b - r)).collect();
            let rv = ps
                .get(self.running_var)
                .data()
                .iter()
                .zip(&var)
                .map(|(&r, &b)| r + m * (b * unbias - r))
                .collect();
            let shape = ps.get(self.running_mean).shape();
            g.queue_buffer_update(self.running_mean, Tensor::from_vec(shape, rm));
            g.queue_buffer_update(self.running_var, Tensor::from_vec(shape, rv));
            y
        } else {
            let ps = g.params();
            let (rm, rv) = (ps.get(self.running_mean), ps.get(self.running_var));
            g.batch_norm(x, gamma, beta, Some((rm, rv)), self.eps).0
        }
    }
}
