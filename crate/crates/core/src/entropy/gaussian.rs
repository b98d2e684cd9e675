//! Discretized conditional Gaussian: likelihood, rate, gradients and coding tables.

use std::f64::consts::{LN_2, SQRT_2};

use ctxvc_autograd::{CustomOp, Real, Tensor};

use super::tables::FreqTable;
use super::{P_MIN, SIGMA_MIN};

/// Widest half-support of a coding table, in symbols.
pub const MAX_HALF_SUPPORT: i64 = 512;

#[inline]
pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / SQRT_2)
}

#[inline]
fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Mass of the unit bin around `x` before flooring. Evaluated on the upper side of
/// the mean so the difference of CDFs never cancels catastrophically.
#[inline]
fn raw_mass(x: f64, mu: f64, sigma: f64) -> f64 {
    let v = (x - mu).abs();
    std_normal_cdf((0.5 - v) / sigma) - std_normal_cdf((-0.5 - v) / sigma)
}

/// `P(x̂)` for an integer `x̂`, floored at [`P_MIN`].
pub fn gaussian_pmf(x: f64, mu: f64, sigma: f64) -> f64 {
    raw_mass(x, mu, sigma.max(SIGMA_MIN)).max(P_MIN)
}

pub fn gaussian_bits(x: f64, mu: f64, sigma: f64) -> f64 {
    -gaussian_pmf(x, mu, sigma).log2()
}

/// Total estimated bits of a latent under per-element `(mu, sigma)`.
pub fn gaussian_rate<T: Real>(x: &Tensor<T>, mu: &Tensor<T>, sigma: &Tensor<T>) -> f64 {
    assert_eq!(x.shape(), mu.shape(), "mu shape");
    assert_eq!(x.shape(), sigma.shape(), "sigma shape");
    x.data()
        .iter()
        .zip(mu.data())
        .zip(sigma.data())
        .map(|((x, m), s)| gaussian_bits(x.to_f64(), m.to_f64(), s.to_f64()))
        .sum()
}

/// Coding table centred on `round(mu)` with half-width `min(ceil(20 sigma), 512)`.
pub fn gaussian_table(mu: f32, sigma: f32) -> FreqTable {
    let (mu, sigma) = (mu as f64, (sigma as f64).max(SIGMA_MIN));
    let half = ((20.0 * sigma).ceil() as i64).min(MAX_HALF_SUPPORT);
    let centre = mu.round() as i64;
    let lo = centre - half;
    let edges: Vec<f64> = (0..=2 * half + 1)
        .map(|i| std_normal_cdf((lo as f64 + i as f64 - 0.5 - mu) / sigma))
        .collect();
    let probs: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    let tail = edges[0] + (1.0 - edges[edges.len() - 1]);
    FreqTable::from_probs(lo, &probs, tail)
}

/// Per-element bits `-log2 P(x | mu, sigma)` as a differentiable op over `[x, mu, sigma]`.
///
/// Where the mass is floored the gradient of the unfloored mass is kept, so training
/// still pulls far-off parameters toward the data.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianBits;

impl<T: Real> CustomOp<T> for GaussianBits {
    fn name(&self) -> &'static str {
        "gaussian_bits"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Tensor<T> {
        let [x, mu, sigma] = inputs else { panic!("gaussian_bits takes 3 inputs") };
        assert_eq!(x.shape(), mu.shape(), "mu shape");
        assert_eq!(x.shape(), sigma.shape(), "sigma shape");
        let data = (0..x.len())
            .map(|i| T::from_f64(gaussian_bits(x.data()[i].to_f64(), mu.data()[i].to_f64(), sigma.data()[i].to_f64())))
            .collect();
        Tensor::from_vec(x.shape(), data)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let [x, mu, sigma] = inputs else { panic!("gaussian_bits takes 3 inputs") };
        let n = x.len();
        let (mut gx, mut gm, mut gs) = (vec![T::ZERO; n], vec![T::ZERO; n], vec![T::ZERO; n]);
        for i in 0..n {
            let (xv, m) = (x.data()[i].to_f64(), mu.data()[i].to_f64());
            let s = sigma.data()[i].to_f64().max(SIGMA_MIN);
            let p = gaussian_pmf(xv, m, s);
            let u = (xv - m + 0.5) / s;
            let l = (xv - m - 0.5) / s;
            let (pu, pl) = (std_normal_pdf(u), std_normal_pdf(l));
            let dp_dx = (pu - pl) / s;
            let dp_ds = (l * pl - u * pu) / s;
            let k = -grad.data()[i].to_f64() / (p * LN_2);
            gx[i] = T::from_f64(k * dp_dx);
            gm[i] = T::from_f64(-k * dp_dx);
            // sigma below the clamp is treated as constant
            gs[i] = if sigma.data()[i].to_f64() >= SIGMA_MIN { T::from_f64(k * dp_ds) } else { T::ZERO };
        }
        let sh = x.shape();
        vec![
            Some(Tensor::from_vec(sh, gx)),
            Some(Tensor::from_vec(sh, gm)),
            Some(Tensor::from_vec(sh, gs)),
        ]
    }
}
