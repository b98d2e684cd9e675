//! Quantization, probability models and the range coder.

pub mod factorized;
pub mod gaussian;
pub mod latent;
pub mod range_coder;
pub mod tables;

use ctxvc_autograd::{Graph, Real, Tensor, Var};
use rand::Rng;

use crate::config::QuantSurrogate;

pub use factorized::FactorizedPrior;
pub use gaussian::{gaussian_bits, gaussian_pmf, gaussian_rate, gaussian_table, GaussianBits};
pub use latent::{decode_factorized, decode_gaussian, encode_factorized, encode_gaussian, CodedSegment};
pub use range_coder::{RangeDecoder, RangeEncoder, PROB_TOTAL};
pub use tables::{FreqTable, SYMBOL_LIMIT};

/// Lower clamp on every predicted scale.
pub const SIGMA_MIN: f64 = 0.11;
/// Floor on every modelled probability.
pub const P_MIN: f64 = 1.0 / 65536.0;

/// Round half away from zero.
pub fn quantize_eval<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::from_f64(v.to_f64().round()))
}

/// `x + u`, `u ~ U(-0.5, 0.5)` elementwise.
pub fn add_uniform_noise<T: Real>(x: &Tensor<T>, rng: &mut impl Rng) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v + T::from_f64(rng.random_range(-0.5..0.5))).collect();
    Tensor::from_vec(x.shape(), data)
}

/// Graph-level quantizer. Eval rounds; training uses the configured surrogate.
pub fn quantize<T: Real>(g: &mut Graph<T>, x: Var, surrogate: QuantSurrogate, rng: &mut impl Rng) -> Var {
    let xv = g.value(x).clone();
    let delta = if !g.is_training() {
        quantize_eval(&xv).zip_map(&xv, |q, v| q - v)
    } else {
        match surrogate {
            QuantSurrogate::Noise => add_uniform_noise(&xv, rng).zip_map(&xv, |q, v| q - v),
            QuantSurrogate::StraightThrough => quantize_eval(&xv).zip_map(&xv, |q, v| q - v),
        }
    };
    let d = g.constant(delta);
    g.add(x, d)
}

/// Quantizer state carried through a forward pass.
#[derive(Clone, Debug)]
pub struct Quantizer {
    pub surrogate: QuantSurrogate,
    pub rng: rand_chacha::ChaCha8Rng,
}

impl Quantizer {
    pub fn new(surrogate: QuantSurrogate, seed: u64) -> Self {
        use rand::SeedableRng;
        Quantizer {
            surrogate,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply<T: Real>(&mut self, g: &mut Graph<T>, x: Var) -> Var {
        quantize(g, x, self.surrogate, &mut self.rng)
    }
}

/// Differentiable per-element Gaussian bits; `mu`, `sigma` and `x` share a shape.
pub fn gaussian_bits_var<T: Real>(g: &mut Graph<T>, x: Var, mu: Var, sigma: Var) -> Var {
    g.custom(Box::new(GaussianBits), &[x, mu, sigma])
}
