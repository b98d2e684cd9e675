//! Per-channel factorized prior for hyper-latents: a learned mixture of logistics,
//! whose CDF is monotone with limits 0 and 1 by construction.

use std::f64::consts::LN_2;

use ctxvc_autograd::nn::ParamBuilder;
use ctxvc_autograd::{CustomOp, Graph, ParamId, ParamStore, Real, Tensor, Var};

use super::tables::FreqTable;
use super::P_MIN;

const COMPONENTS: usize = 3;
const TAIL_SCALES: f64 = 20.0;
const MAX_HALF_SUPPORT: i64 = 512;

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(a) - sigmoid(b)` for `a >= b`, taken on the side where neither term is near 1.
#[inline]
fn sigmoid_diff(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        sigmoid(-b) - sigmoid(-a)
    } else {
        sigmoid(a) - sigmoid(b)
    }
}

/// Mixture parameters of one channel in `f64`.
#[derive(Clone, Debug)]
struct Mixture {
    weights: [f64; COMPONENTS],
    means: [f64; COMPONENTS],
    scales: [f64; COMPONENTS],
}

impl Mixture {
    fn cdf(&self, x: f64) -> f64 {
        (0..COMPONENTS)
            .map(|k| self.weights[k] * sigmoid((x - self.means[k]) / self.scales[k]))
            .sum()
    }

    /// Unfloored mass of the unit bin around `x`.
    fn mass(&self, x: f64) -> f64 {
        (0..COMPONENTS)
            .map(|k| {
                let s = self.scales[k];
                self.weights[k] * sigmoid_diff((x + 0.5 - self.means[k]) / s, (x - 0.5 - self.means[k]) / s)
            })
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct FactorizedPrior {
    pub logits: ParamId,
    pub means: ParamId,
    pub log_scales: ParamId,
    pub channels: usize,
}

impl FactorizedPrior {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, channels: usize) -> Self {
        let mut pb = pb.sub(name);
        let shape = [channels, COMPONENTS, 1, 1];
        let means = Tensor::from_fn(shape, |[_, k, _, _]| T::from_f64(k as f64 - 1.0));
        FactorizedPrior {
            logits: pb.constant("logits", shape, 0.0, true),
            means: pb.tensor("means", means, true),
            log_scales: pb.constant("log_scales", shape, 0.0, true),
            channels,
        }
    }

    fn mixture<T: Real>(logits: &Tensor<T>, means: &Tensor<T>, log_scales: &Tensor<T>, c: usize) -> Mixture {
        let at = |t: &Tensor<T>, k: usize| t.at([c, k, 0, 0]).to_f64();
        let lmax = (0..COMPONENTS).map(|k| at(logits, k)).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = (0..COMPONENTS).map(|k| (at(logits, k) - lmax).exp()).collect();
        let z: f64 = e.iter().sum();
        Mixture {
            weights: std::array::from_fn(|k| e[k] / z),
            means: std::array::from_fn(|k| at(means, k)),
            scales: std::array::from_fn(|k| at(log_scales, k).exp()),
        }
    }

    fn mixtures<T: Real>(&self, ps: &ParamStore<T>) -> Vec<Mixture> {
        (0..self.channels)
            .map(|c| Self::mixture(ps.get(self.logits), ps.get(self.means), ps.get(self.log_scales), c))
            .collect()
    }

    /// Per-element bits of `x` (`[n, channels, h, w]`) as a graph node.
    pub fn bits<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let (l, m, s) = (g.param(self.logits), g.param(self.means), g.param(self.log_scales));
        g.custom(Box::new(MixtureBits), &[x, l, m, s])
    }

    /// Floored mass of integer `x` in channel `c`.
    pub fn pmf<T: Real>(&self, ps: &ParamStore<T>, c: usize, x: f64) -> f64 {
        Self::mixture(ps.get(self.logits), ps.get(self.means), ps.get(self.log_scales), c)
            .mass(x)
            .max(P_MIN)
    }

    pub fn cdf<T: Real>(&self, ps: &ParamStore<T>, c: usize, x: f64) -> f64 {
        Self::mixture(ps.get(self.logits), ps.get(self.means), ps.get(self.log_scales), c).cdf(x)
    }

    /// Total estimated bits of a quantized latent.
    pub fn rate<T: Real>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> f64 {
        let mix = self.mixtures(ps);
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "factorized prior channel count");
        let mut bits = 0.0;
        for b in 0..n {
            for (ch, m) in mix.iter().enumerate() {
                for i in 0..h * w {
                    bits -= m.mass(x.data()[(b * c + ch) * h * w + i].to_f64()).max(P_MIN).log2();
                }
            }
        }
        bits
    }

    /// One coding table per channel.
    pub fn tables<T: Real>(&self, ps: &ParamStore<T>) -> Vec<FreqTable> {
        self.mixtures(ps)
            .iter()
            .map(|m| {
                let centre: f64 = (0..COMPONENTS).map(|k| m.weights[k] * m.means[k]).sum();
                let centre = centre.round();
                let reach = (0..COMPONENTS)
                    .map(|k| (m.means[k] - centre).abs() + TAIL_SCALES * m.scales[k])
                    .fold(0.0, f64::max);
                let half = (reach.ceil() as i64).clamp(1, MAX_HALF_SUPPORT);
                let lo = centre as i64 - half;
                let probs: Vec<f64> = (0..=2 * half).map(|i| m.mass((lo + i) as f64)).collect();
                let tail = m.cdf(lo as f64 - 0.5) + (1.0 - m.cdf((lo + 2 * half) as f64 + 0.5));
                FreqTable::from_probs(lo, &probs, tail.max(0.0))
            })
            .collect()
    }
}

/// Inputs `[x, logits, means, log_scales]`; output per-element bits.
struct MixtureBits;

impl<T: Real> CustomOp<T> for MixtureBits {
    fn name(&self) -> &'static str {
        "mixture_bits"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Tensor<T> {
        let [x, l, m, s] = inputs else { panic!("mixture_bits takes 4 inputs") };
        let [n, c, h, w] = x.shape();
        let mix: Vec<Mixture> = (0..c).map(|ch| FactorizedPrior::mixture(l, m, s, ch)).collect();
        Tensor::from_fn([n, c, h, w], |[b, ch, y, xx]| {
            let v = x.at([b, ch, y, xx]).to_f64();
            T::from_f64(-mix[ch].mass(v).max(P_MIN).log2())
        })
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let [x, l, m, s] = inputs else { panic!("mixture_bits takes 4 inputs") };
        let [n, c, h, w] = x.shape();
        let mix: Vec<Mixture> = (0..c).map(|ch| FactorizedPrior::mixture(l, m, s, ch)).collect();
        let mut gx = Tensor::<T>::zeros(x.shape());
        let (mut gl, mut gm, mut gs) = (vec![0.0; c * COMPONENTS], vec![0.0; c * COMPONENTS], vec![0.0; c * COMPONENTS]);
        for b in 0..n {
            for (ch, mx) in mix.iter().enumerate() {
                for i in 0..h * w {
                    let idx = (b * c + ch) * h * w + i;
                    let v = x.data()[idx].to_f64();
                    let p = mx.mass(v).max(P_MIN);
                    let k = -grad.data()[idx].to_f64() / (p * LN_2);
                    let mut dp_dx = 0.0;
                    for j in 0..COMPONENTS {
                        let sc = mx.scales[j];
                        let a = (v + 0.5 - mx.means[j]) / sc;
                        let bb = (v - 0.5 - mx.means[j]) / sc;
                        let (da, db) = (sigmoid(a) * sigmoid(-a), sigmoid(bb) * sigmoid(-bb));
                        let d = sigmoid_diff(a, bb);
                        let wj = mx.weights[j];
                        dp_dx += wj * (da - db) / sc;
                        let pi = ch * COMPONENTS + j;
                        gm[pi] += k * (-wj * (da - db) / sc);
                        gs[pi] += k * wj * (-a * da + bb * db);
                        // softmax: dp/dlogit_j = w_j (d_j - p_unfloored)
                        gl[pi] += k * wj * (d - mx.mass(v));
                    }
                    gx.data_mut()[idx] = T::from_f64(k * dp_dx);
                }
            }
        }
        let sh = [c, COMPONENTS, 1, 1];
        let conv = |v: Vec<f64>| Some(Tensor::from_vec(sh, v.into_iter().map(T::from_f64).collect()));
        vec![Some(gx), conv(gl), conv(gm), conv(gs)]
    }
}
