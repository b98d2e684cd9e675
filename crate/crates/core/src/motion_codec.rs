//! Hyperprior coding of the motion field.

use ctxvc_autograd::nn::ParamBuilder;
use ctxvc_autograd::{Graph, Real, Var};

use crate::blocks::{gaussian_params, Analysis16, HyperAnalysis, HyperSynthesis, Synthesis16};
use crate::config::CodecConfig;
use crate::entropy::{gaussian_bits_var, FactorizedPrior, Quantizer};

#[derive(Clone, Debug)]
pub struct MotionCodec {
    pub encoder: Analysis16,
    pub hyper_encoder: HyperAnalysis,
    pub hyper_decoder: HyperSynthesis,
    pub prior: FactorizedPrior,
    pub decoder: Synthesis16,
    pub latent_channels: usize,
}

/// Training-path result: decoded motion and the two rate terms in bits.
#[derive(Clone, Copy, Debug)]
pub struct MotionForward {
    pub v_hat: Var,
    pub m_hat: Var,
    pub z_hat: Var,
    pub bits_m: Var,
    pub bits_z: Var,
}

impl MotionCodec {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, cfg: &CodecConfig) -> Self {
        let mut pb = pb.sub(name);
        let (cm, lm, hz, mid) = (
            cfg.motion_channels,
            cfg.motion_latent_channels,
            cfg.motion_hyper_channels,
            cfg.transform_channels,
        );
        MotionCodec {
            encoder: Analysis16::new(&mut pb, "encoder", cm, mid, lm),
            hyper_encoder: HyperAnalysis::new(&mut pb, "hyper_encoder", lm, mid, hz),
            hyper_decoder: HyperSynthesis::new(&mut pb, "hyper_decoder", hz, mid, 2 * lm),
            prior: FactorizedPrior::new(&mut pb, "prior", hz),
            decoder: Synthesis16::new(&mut pb, "decoder", lm, mid, cm),
            latent_channels: lm,
        }
    }

    pub fn encode<T: Real>(&self, g: &mut Graph<T>, v: Var) -> Var {
        self.encoder.forward(g, v)
    }

    pub fn hyper_encode<T: Real>(&self, g: &mut Graph<T>, m: Var) -> Var {
        self.hyper_encoder.forward(g, m)
    }

    /// `(mu, sigma)` for the motion latent.
    pub fn hyper_decode<T: Real>(&self, g: &mut Graph<T>, z_hat: Var) -> (Var, Var) {
        let h = self.hyper_decoder.forward(g, z_hat);
        gaussian_params(g, h, self.latent_channels)
    }

    pub fn decode<T: Real>(&self, g: &mut Graph<T>, m_hat: Var) -> Var {
        self.decoder.forward(g, m_hat)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, v: Var, q: &mut Quantizer) -> MotionForward {
        let m = self.encode(g, v);
        let z = self.hyper_encode(g, m);
        let z_hat = q.apply(g, z);
        let (mu, sigma) = self.hyper_decode(g, z_hat);
        let m_hat = q.apply(g, m);
        let bm = gaussian_bits_var(g, m_hat, mu, sigma);
        let bits_m = g.sum(bm);
        let bz = self.prior.bits(g, z_hat);
        let bits_z = g.sum(bz);
        let v_hat = self.decode(g, m_hat);
        MotionForward {
            v_hat,
            m_hat,
            z_hat,
            bits_m,
            bits_z,
        }
    }
}
