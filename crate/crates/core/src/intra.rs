//! Hyperprior image codec used for I frames.

use ctxvc_autograd::nn::ParamBuilder;
use ctxvc_autograd::{Graph, Real, Var};

use crate::blocks::{gaussian_params, Analysis16, HyperAnalysis, HyperSynthesis, Synthesis16};
use crate::config::CodecConfig;
use crate::entropy::{gaussian_bits_var, FactorizedPrior, Quantizer};

#[derive(Clone, Debug)]
pub struct IntraCodec {
    pub encoder: Analysis16,
    pub hyper_encoder: HyperAnalysis,
    pub hyper_decoder: HyperSynthesis,
    pub prior: FactorizedPrior,
    pub decoder: Synthesis16,
    pub latent_channels: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct IntraForward {
    pub x_hat: Var,
    pub y_hat: Var,
    pub z_hat: Var,
    pub bits_y: Var,
    pub bits_z: Var,
}

impl IntraCodec {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, cfg: &CodecConfig) -> Self {
        let mut pb = pb.sub(name);
        let (c, l, hz) = (cfg.intra_channels, cfg.intra_latent_channels, cfg.intra_hyper_channels);
        IntraCodec {
            encoder: Analysis16::new(&mut pb, "encoder", 3, c, l),
            hyper_encoder: HyperAnalysis::new(&mut pb, "hyper_encoder", l, c, hz),
            hyper_decoder: HyperSynthesis::new(&mut pb, "hyper_decoder", hz, c, 2 * l),
            prior: FactorizedPrior::new(&mut pb, "prior", hz),
            decoder: Synthesis16::new(&mut pb, "decoder", l, c, 3),
            latent_channels: l,
        }
    }

    pub fn encode<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        self.encoder.forward(g, x)
    }

    pub fn hyper_encode<T: Real>(&self, g: &mut Graph<T>, y: Var) -> Var {
        self.hyper_encoder.forward(g, y)
    }

    pub fn hyper_decode<T: Real>(&self, g: &mut Graph<T>, z_hat: Var) -> (Var, Var) {
        let h = self.hyper_decoder.forward(g, z_hat);
        gaussian_params(g, h, self.latent_channels)
    }

    pub fn decode<T: Real>(&self, g: &mut Graph<T>, y_hat: Var) -> Var {
        self.decoder.forward(g, y_hat)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var, q: &mut Quantizer) -> IntraForward {
        let y = self.encode(g, x);
        let z = self.hyper_encode(g, y);
        let z_hat = q.apply(g, z);
        let (mu, sigma) = self.hyper_decode(g, z_hat);
        let y_hat = q.apply(g, y);
        let by = gaussian_bits_var(g, y_hat, mu, sigma);
        let bits_y = g.sum(by);
        let bz = self.prior.bits(g, z_hat);
        let bits_z = g.sum(bz);
        let x_hat = self.decode(g, y_hat);
        IntraForward {
            x_hat,
            y_hat,
            z_hat,
            bits_y,
            bits_z,
        }
    }
}
