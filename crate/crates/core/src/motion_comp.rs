//! Deformable-convolution compensation of the reference feature.

use ctxvc_autograd::nn::{Conv2d, ParamBuilder};
use ctxvc_autograd::{Graph, Real, Var};

use crate::blocks::leaky;
use crate::error::{Error, Result};

const TAPS: usize = 9;

#[derive(Clone, Debug)]
pub struct MotionCompensation {
    /// Predicts `2·G·9` offsets then `G·9` mask logits.
    pub offset_conv: Conv2d,
    /// Weights of the modulated deformable conv (3×3, `C_f → C_f`).
    pub dcn: Conv2d,
    pub fuse1: Conv2d,
    pub fuse2: Conv2d,
    pub groups: usize,
}

impl MotionCompensation {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, motion: usize, feat: usize, groups: usize) -> Self {
        let mut pb = pb.sub(name);
        MotionCompensation {
            offset_conv: Conv2d::new(&mut pb, "offset_conv", motion, 3 * groups * TAPS, 3, 1),
            dcn: Conv2d::new(&mut pb, "dcn", feat, feat, 3, 1),
            fuse1: Conv2d::new(&mut pb, "fuse1", 2 * feat, feat, 3, 1),
            fuse2: Conv2d::new(&mut pb, "fuse2", feat, feat, 3, 1),
            groups,
        }
    }

    /// Offsets `[n, 2·G·9, h, w]` (pixels, `dx` then `dy` per tap) and masks `[n, G·9, h, w]` in `[0, 1]`.
    pub fn offsets_and_masks<T: Real>(&self, g: &mut Graph<T>, v_hat: Var) -> (Var, Var) {
        let o = self.offset_conv.forward(g, v_hat);
        let n_off = 2 * self.groups * TAPS;
        let off = g.slice_channels(o, 0, n_off);
        let logits = g.slice_channels(o, n_off, self.groups * TAPS);
        (off, g.sigmoid(logits))
    }

    pub fn warp<T: Real>(&self, g: &mut Graph<T>, off: Var, mask: Var, f_ref: Var) -> Result<Var> {
        let (a, b) = (g.shape(off), g.shape(f_ref));
        if a[2..] != b[2..] || a[0] != b[0] {
            return Err(Error::Shape(format!("offsets {a:?} vs reference {b:?}")));
        }
        let w = g.param(self.dcn.weight);
        let bias = g.param(self.dcn.bias);
        Ok(g.deform_conv2d(f_ref, off, mask, w, Some(bias), self.groups))
    }

    /// `f_warp + conv(leaky(conv(concat(f_warp, f_ref))))`.
    pub fn fuse<T: Real>(&self, g: &mut Graph<T>, f_warp: Var, f_ref: Var) -> Var {
        let x = g.concat(&[f_warp, f_ref]);
        let h = self.fuse1.forward(g, x);
        let h = leaky(g, h);
        let h = self.fuse2.forward(g, h);
        g.add(f_warp, h)
    }

    /// Predicted feature from decoded motion and the reference feature.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, v_hat: Var, f_ref: Var) -> Result<Var> {
        let (off, mask) = self.offsets_and_masks(g, v_hat);
        let warped = self.warp(g, off, mask, f_ref)?;
        Ok(self.fuse(g, warped, f_ref))
    }
}
