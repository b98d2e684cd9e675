//! Layers shared by every sub-network.

use ctxvc_autograd::nn::{Conv2d, ConvTranspose2d, ParamBuilder};
use ctxvc_autograd::{Graph, Real, Var};

pub const LEAKY_SLOPE: f64 = 0.1;

#[inline]
pub fn leaky<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    g.leaky_relu(x, LEAKY_SLOPE)
}

/// `x + conv2(leaky(conv1(x)))`, 3×3 kernels.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, channels: usize) -> Self {
        let mut pb = pb.sub(name);
        ResBlock {
            conv1: Conv2d::new(&mut pb, "conv1", channels, channels, 3, 1),
            conv2: Conv2d::new(&mut pb, "conv2", channels, channels, 3, 1),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let h = self.conv1.forward(g, x);
        let h = leaky(g, h);
        let h = self.conv2.forward(g, h);
        g.add(x, h)
    }
}

/// Four stride-2 stages (conv then residual block): total stride 16.
#[derive(Clone, Debug)]
pub struct Analysis16 {
    pub stages: Vec<(Conv2d, ResBlock)>,
}

impl Analysis16 {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, cin: usize, mid: usize, cout: usize) -> Self {
        let mut pb = pb.sub(name);
        let stages = (0..4)
            .map(|i| {
                let ci = if i == 0 { cin } else { mid };
                let co = if i == 3 { cout } else { mid };
                let conv = Conv2d::new(&mut pb, &format!("down{i}"), ci, co, 3, 2);
                (conv, ResBlock::new(&mut pb, &format!("res{i}"), co))
            })
            .collect();
        Analysis16 { stages }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        self.stages.iter().fold(x, |h, (conv, rb)| {
            let h = conv.forward(g, h);
            rb.forward(g, h)
        })
    }
}

/// Mirror of [`Analysis16`]: residual block then ×2 transposed conv, four times.
#[derive(Clone, Debug)]
pub struct Synthesis16 {
    pub stages: Vec<(ResBlock, ConvTranspose2d)>,
}

impl Synthesis16 {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, cin: usize, mid: usize, cout: usize) -> Self {
        let mut pb = pb.sub(name);
        let stages = (0..4)
            .map(|i| {
                let ci = if i == 0 { cin } else { mid };
                let co = if i == 3 { cout } else { mid };
                let rb = ResBlock::new(&mut pb, &format!("res{i}"), ci);
                (rb, ConvTranspose2d::new(&mut pb, &format!("up{i}"), ci, co, 3, 2))
            })
            .collect();
        Synthesis16 { stages }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        self.stages.iter().fold(x, |h, (rb, up)| {
            let h = rb.forward(g, h);
            up.forward(g, h)
        })
    }
}

/// Hyper analysis: stride 4 with leaky activations in between.
#[derive(Clone, Debug)]
pub struct HyperAnalysis {
    pub convs: [Conv2d; 3],
}

impl HyperAnalysis {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, cin: usize, mid: usize, cout: usize) -> Self {
        let mut pb = pb.sub(name);
        HyperAnalysis {
            convs: [
                Conv2d::new(&mut pb, "conv0", cin, mid, 3, 1),
                Conv2d::new(&mut pb, "conv1", mid, mid, 3, 2),
                Conv2d::new(&mut pb, "conv2", mid, cout, 3, 2),
            ],
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let h = self.convs[0].forward(g, x);
        let h = leaky(g, h);
        let h = self.convs[1].forward(g, h);
        let h = leaky(g, h);
        self.convs[2].forward(g, h)
    }
}

/// Hyper synthesis: two ×2 transposed convs and a 3×3 output conv.
#[derive(Clone, Debug)]
pub struct HyperSynthesis {
    pub up0: ConvTranspose2d,
    pub up1: ConvTranspose2d,
    pub out: Conv2d,
}

impl HyperSynthesis {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, cin: usize, mid: usize, cout: usize) -> Self {
        let mut pb = pb.sub(name);
        HyperSynthesis {
            up0: ConvTranspose2d::new(&mut pb, "up0", cin, mid, 3, 2),
            up1: ConvTranspose2d::new(&mut pb, "up1", mid, mid, 3, 2),
            out: Conv2d::new(&mut pb, "out", mid, cout, 3, 1),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let h = self.up0.forward(g, x);
        let h = leaky(g, h);
        let h = self.up1.forward(g, h);
        let h = leaky(g, h);
        self.out.forward(g, h)
    }
}

/// Splits `[mu | raw]` into `mu` and `sigma = max(softplus(raw), SIGMA_MIN)`.
pub fn gaussian_params<T: Real>(g: &mut Graph<T>, x: Var, channels: usize) -> (Var, Var) {
    let mu = g.slice_channels(x, 0, channels);
    let raw = g.slice_channels(x, channels, channels);
    let sp = g.softplus(raw);
    let sigma = g.lower_bound(sp, crate::entropy::SIGMA_MIN);
    (mu, sigma)
}
