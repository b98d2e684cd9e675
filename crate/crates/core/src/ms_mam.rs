//! Multiscale motion-aware motion estimation with coarse-to-fine fusion.

use ctxvc_autograd::nn::{BatchNorm2d, Conv2d, Linear, ParamBuilder};
use ctxvc_autograd::{Graph, Real, Var};

use crate::autoencoder::FeaturePyramid;
use crate::blocks::leaky;
use crate::error::{Error, Result};

/// `conv3x3(leaky(conv3x3(concat(F, F_ref))))` at one scale.
#[derive(Clone, Debug)]
pub struct InitialMotion {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl InitialMotion {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, feat: usize, motion: usize) -> Self {
        let mut pb = pb.sub(name);
        InitialMotion {
            conv1: Conv2d::new(&mut pb, "conv1", 2 * feat, motion, 3, 1),
            conv2: Conv2d::new(&mut pb, "conv2", motion, motion, 3, 1),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, cur: Var, reference: Var) -> Var {
        let x = g.concat(&[cur, reference]);
        let h = self.conv1.forward(g, x);
        let h = leaky(g, h);
        self.conv2.forward(g, h)
    }
}

/// Upsample ×2, two conv/batch-norm/leaky stages, global pooling, linear: one
/// descriptor per batch item, shape `[n, D, 1, 1]`.
#[derive(Clone, Debug)]
pub struct MotionAwareEncoder {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub fc: Linear,
}

impl MotionAwareEncoder {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, motion: usize, dim: usize) -> Self {
        let mut pb = pb.sub(name);
        MotionAwareEncoder {
            conv1: Conv2d::new(&mut pb, "conv1", motion, motion, 3, 1),
            bn1: BatchNorm2d::new(&mut pb, "bn1", motion),
            conv2: Conv2d::new(&mut pb, "conv2", motion, motion, 3, 1),
            bn2: BatchNorm2d::new(&mut pb, "bn2", motion),
            fc: Linear::new(&mut pb, "fc", motion, dim),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, v_coarse: Var) -> Var {
        let h = g.upsample2(v_coarse);
        let h = self.conv1.forward(g, h);
        let h = self.bn1.forward(g, h);
        let h = leaky(g, h);
        let h = self.conv2.forward(g, h);
        let h = self.bn2.forward(g, h);
        let h = leaky(g, h);
        let h = g.global_avg_pool(h);
        self.fc.forward(g, h)
    }
}

/// Motion-aware fusion of a fine field with the next coarser one.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub encoder: MotionAwareEncoder,
    pub kernel_fc1: Linear,
    pub kernel_fc2: Linear,
    pub coef_fc1: Linear,
    pub coef_fc2: Linear,
    pub mix: Conv2d,
    pub post: Conv2d,
    pub motion: usize,
}

impl FusionBlock {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, motion: usize, dim: usize) -> Self {
        let mut pb = pb.sub(name);
        FusionBlock {
            encoder: MotionAwareEncoder::new(&mut pb, "encoder", motion, dim),
            kernel_fc1: Linear::new(&mut pb, "kernel_fc1", dim, dim),
            kernel_fc2: Linear::new(&mut pb, "kernel_fc2", dim, motion * 9),
            coef_fc1: Linear::new(&mut pb, "coef_fc1", dim, dim),
            coef_fc2: Linear::new(&mut pb, "coef_fc2", dim, motion),
            mix: Conv2d::new(&mut pb, "mix", motion, motion, 1, 1),
            post: Conv2d::new(&mut pb, "post", motion, motion, 3, 1),
            motion,
        }
    }

    /// Per-channel 3×3 kernels, `[n, C_m, 3, 3]`.
    pub fn predict_kernels<T: Real>(&self, g: &mut Graph<T>, dv: Var) -> Var {
        let h = self.kernel_fc1.forward(g, dv);
        let h = leaky(g, h);
        let k = self.kernel_fc2.forward(g, h);
        let n = g.shape(k)[0];
        g.reshape(k, [n, self.motion, 3, 3])
    }

    /// Nonnegative per-channel coefficients, `[n, C_m, 1, 1]`.
    pub fn predict_coefficients<T: Real>(&self, g: &mut Graph<T>, dv: Var) -> Var {
        let h = self.coef_fc1.forward(g, dv);
        let h = leaky(g, h);
        let c = self.coef_fc2.forward(g, h);
        g.relu(c)
    }

    /// Channel-modulated fine motion plus the kernel-adapted spatial branch, before
    /// the output stage.
    pub fn modulate<T: Real>(&self, g: &mut Graph<T>, v_fine: Var, dv: Var) -> Var {
        let kernels = self.predict_kernels(g, dv);
        let alpha = self.predict_coefficients(g, dv);
        let channel = g.mul_channels(v_fine, alpha);
        let s = g.depthwise_dyn(v_fine, kernels, 1);
        let s = leaky(g, s);
        let spatial = self.mix.forward(g, s);
        g.add(channel, spatial)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, v_fine: Var, v_coarse: Var) -> Result<Var> {
        let (f, c) = (g.shape(v_fine), g.shape(v_coarse));
        if f[2] != 2 * c[2] || f[3] != 2 * c[3] || f[1] != c[1] || f[0] != c[0] {
            return Err(Error::Shape(format!("fusion of {f:?} with coarse {c:?}")));
        }
        let dv = self.encoder.forward(g, v_coarse);
        let v = self.modulate(g, v_fine, dv);
        let h = leaky(g, v);
        let h = self.post.forward(g, h);
        Ok(leaky(g, h))
    }
}

#[derive(Clone, Debug)]
pub struct MsMam {
    pub initial: [InitialMotion; 3],
    pub fuse1: FusionBlock,
    pub fuse0: FusionBlock,
    pub out: Conv2d,
    pub multiscale: bool,
}

impl MsMam {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, feat: usize, motion: usize, dim: usize, multiscale: bool) -> Self {
        let mut pb = pb.sub(name);
        MsMam {
            initial: std::array::from_fn(|i| InitialMotion::new(&mut pb, &format!("initial{i}"), feat, motion)),
            fuse1: FusionBlock::new(&mut pb, "fuse1", motion, dim),
            fuse0: FusionBlock::new(&mut pb, "fuse0", motion, dim),
            out: Conv2d::new(&mut pb, "out", motion, motion, 3, 1),
            multiscale,
        }
    }

    pub fn initial_motion<T: Real>(&self, g: &mut Graph<T>, cur: &FeaturePyramid, reference: &FeaturePyramid) -> Result<[Var; 3]> {
        for i in 0..3 {
            let (a, b) = (g.shape(cur.levels[i]), g.shape(reference.levels[i]));
            if a != b {
                return Err(Error::Shape(format!("pyramid level {i}: {a:?} vs {b:?}")));
            }
        }
        Ok(std::array::from_fn(|i| self.initial[i].forward(g, cur.levels[i], reference.levels[i])))
    }

    /// Full-resolution motion `v_t`. Without multiscale fusion this is `v^0`.
    pub fn estimate<T: Real>(&self, g: &mut Graph<T>, cur: &FeaturePyramid, reference: &FeaturePyramid) -> Result<Var> {
        let [v0, v1, v2] = self.initial_motion(g, cur, reference)?;
        if !self.multiscale {
            return Ok(v0);
        }
        let v1f = self.fuse1.forward(g, v1, v2)?;
        let v0f = self.fuse0.forward(g, v0, v1f)?;
        let h = leaky(g, v0f);
        let h = self.out.forward(g, h);
        Ok(g.add(v0, h))
    }
}
