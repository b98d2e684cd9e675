//! Pixel to feature transforms: three-level feature pyramid and frame reconstruction.

use ctxvc_autograd::nn::{Conv2d, ConvTranspose2d, ParamBuilder};
use ctxvc_autograd::{Graph, Real, Var};

use crate::blocks::ResBlock;
use crate::error::{Error, Result};

/// Feature grids at full, 1/2 and 1/4 resolution.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub levels: [Var; 3],
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub stem: Conv2d,
    pub res0: ResBlock,
    pub down1: Conv2d,
    pub res1: ResBlock,
    pub down2: Conv2d,
    pub res2: ResBlock,
    pub channels: usize,
}

impl FeatureExtractor {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, channels: usize) -> Self {
        let mut pb = pb.sub(name);
        FeatureExtractor {
            stem: Conv2d::new(&mut pb, "stem", 3, channels, 3, 1),
            res0: ResBlock::new(&mut pb, "res0", channels),
            down1: Conv2d::new(&mut pb, "down1", channels, channels, 3, 2),
            res1: ResBlock::new(&mut pb, "res1", channels),
            down2: Conv2d::new(&mut pb, "down2", channels, channels, 3, 2),
            res2: ResBlock::new(&mut pb, "res2", channels),
            channels,
        }
    }

    pub fn pyramid<T: Real>(&self, g: &mut Graph<T>, x: Var) -> FeaturePyramid {
        let h = self.stem.forward(g, x);
        let l0 = self.res0.forward(g, h);
        let h = self.down1.forward(g, l0);
        let l1 = self.res1.forward(g, h);
        let h = self.down2.forward(g, l1);
        let l2 = self.res2.forward(g, h);
        FeaturePyramid { levels: [l0, l1, l2] }
    }

    /// Pyramids of the current frame and the previous reconstruction, with shared weights.
    pub fn extract<T: Real>(&self, g: &mut Graph<T>, x_cur: Var, x_ref: Var) -> Result<(FeaturePyramid, FeaturePyramid)> {
        let (a, b) = (g.shape(x_cur), g.shape(x_ref));
        if a != b {
            return Err(Error::Shape(format!("current frame {a:?} vs reference {b:?}")));
        }
        if a[2] % 4 != 0 || a[3] % 4 != 0 {
            return Err(Error::Dimensions {
                width: a[3],
                height: a[2],
                reason: "feature extraction needs dimensions divisible by 4",
            });
        }
        Ok((self.pyramid(g, x_cur), self.pyramid(g, x_ref)))
    }
}

/// Three residual blocks and a stride-1 transposed conv back to RGB.
#[derive(Clone, Debug)]
pub struct Reconstructor {
    pub blocks: [ResBlock; 3],
    pub out: ConvTranspose2d,
}

impl Reconstructor {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, channels: usize) -> Self {
        let mut pb = pb.sub(name);
        Reconstructor {
            blocks: std::array::from_fn(|i| ResBlock::new(&mut pb, &format!("res{i}"), channels)),
            out: ConvTranspose2d::new(&mut pb, "out", channels, 3, 3, 1),
        }
    }

    /// Unclamped frame; clamping to `[0, 1]` happens only at evaluation.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, f: Var) -> Result<Var> {
        if !g.value(f).all_finite() {
            return Err(Error::NonFinite("reconstructor input"));
        }
        let h = self.blocks.iter().fold(f, |h, rb| rb.forward(g, h));
        Ok(self.out.forward(g, h))
    }
}
