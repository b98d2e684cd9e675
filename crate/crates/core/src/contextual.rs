//! Conditional coding of the current feature given the predicted feature, with
//! temporal, checkerboard-spatial and channel-group contexts for the entropy model.

use ctxvc_autograd::nn::{Conv2d, ParamBuilder};
use ctxvc_autograd::{Graph, Mode, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::blocks::{gaussian_params, leaky, Analysis16, HyperAnalysis, HyperSynthesis, Synthesis16};
use crate::config::CodecConfig;
use crate::entropy::{decode_gaussian, encode_gaussian, gaussian_bits, gaussian_bits_var, CodedSegment, FactorizedPrior, Quantizer};
use crate::error::{Error, Result};

/// Temporal-context channels per latent channel.
const TEMPORAL_PER_CHANNEL: usize = 2;

#[inline]
pub fn is_anchor(y: usize, x: usize) -> bool {
    (y + x) % 2 == 0
}

/// 1 on anchors, 0 elsewhere.
pub fn anchor_mask<T: Real>(shape: [usize; 4]) -> Tensor<T> {
    Tensor::from_fn(shape, |[_, _, y, x]| if is_anchor(y, x) { T::ONE } else { T::ZERO })
}

/// Keeps anchor values and writes `+0` elsewhere.
pub fn keep_anchors<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(t.shape(), |[n, c, y, x]| if is_anchor(y, x) { t.at([n, c, y, x]) } else { T::ZERO })
}

/// Which half of the checkerboard a pass codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pass {
    Anchor,
    NonAnchor,
}

impl Pass {
    pub fn selects(self, y: usize, x: usize) -> bool {
        is_anchor(y, x) == (self == Pass::Anchor)
    }
}

/// The eight coded segments in order: chunk-major, anchors first.
pub fn segment_schedule(chunks: usize) -> Vec<(usize, Pass)> {
    (0..chunks).flat_map(|k| [(k, Pass::Anchor), (k, Pass::NonAnchor)]).collect()
}

#[derive(Clone, Debug)]
pub struct ChunkNets {
    /// Absent for the first chunk, whose channel context is zero.
    pub channel: Option<(Conv2d, Conv2d)>,
    pub spatial: Conv2d,
    pub input: Conv2d,
    pub head: Conv2d,
    pub offset: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct ContextualCodec {
    pub encoder: Analysis16,
    pub hyper_encoder: HyperAnalysis,
    pub hyper_decoder: HyperSynthesis,
    pub prior: FactorizedPrior,
    pub temporal_encoder: Analysis16,
    pub prior_fusion1: Conv2d,
    pub prior_fusion2: Conv2d,
    pub chunks: Vec<ChunkNets>,
    pub trunk: [Conv2d; 2],
    pub decoder: Synthesis16,
    pub refine1: Conv2d,
    pub refine2: Conv2d,
    pub latent_channels: usize,
}

/// Training-path outputs.
#[derive(Clone, Copy, Debug)]
pub struct ContextForward {
    pub f_hat: Var,
    pub c_hat: Var,
    pub s_hat: Var,
    pub mu: Var,
    pub sigma: Var,
    pub bits_c: Var,
    pub bits_s: Var,
}

/// Entropy parameters for the whole latent, assembled pass by pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentParams<T> {
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

/// Result of coding the contextual latent.
#[derive(Clone, Debug)]
pub struct ContextCoded {
    pub segments: Vec<CodedSegment>,
    pub c_hat: Tensor<f32>,
    pub params: LatentParams<f32>,
}

impl ContextualCodec {
    pub fn new<T: Real>(pb: &mut ParamBuilder<T>, name: &str, cfg: &CodecConfig) -> Self {
        let mut pb = pb.sub(name);
        let (cf, lc, hz, hid, mid) = (
            cfg.feature_channels,
            cfg.context_latent_channels,
            cfg.context_hyper_channels,
            cfg.context_hidden,
            cfg.transform_channels,
        );
        let tc = TEMPORAL_PER_CHANNEL * lc;
        let chunks = cfg
            .context_groups
            .iter()
            .zip(cfg.group_offsets())
            .enumerate()
            .map(|(k, (&gk, off))| {
                let mut cb = pb.sub(&format!("chunk{k}"));
                let width = TEMPORAL_PER_CHANNEL * gk;
                ChunkNets {
                    channel: (k > 0).then(|| {
                        (
                            Conv2d::new(&mut cb, "channel1", off, hid, 3, 1),
                            Conv2d::new(&mut cb, "channel2", hid, width, 3, 1),
                        )
                    }),
                    spatial: Conv2d::new(&mut cb, "spatial", gk, width, 5, 1),
                    input: Conv2d::new(&mut cb, "input", 3 * width, hid, 1, 1),
                    head: Conv2d::new(&mut cb, "head", hid, 2 * gk, 1, 1),
                    offset: off,
                    width: gk,
                }
            })
            .collect();
        ContextualCodec {
            encoder: Analysis16::new(&mut pb, "encoder", 2 * cf, mid, lc),
            hyper_encoder: HyperAnalysis::new(&mut pb, "hyper_encoder", lc, mid, hz),
            hyper_decoder: HyperSynthesis::new(&mut pb, "hyper_decoder", hz, mid, hid),
            prior: FactorizedPrior::new(&mut pb, "prior", hz),
            temporal_encoder: Analysis16::new(&mut pb, "temporal_encoder", cf, mid, tc),
            prior_fusion1: Conv2d::new(&mut pb, "prior_fusion1", tc + hid, hid, 3, 1),
            prior_fusion2: Conv2d::new(&mut pb, "prior_fusion2", hid, tc, 3, 1),
            chunks,
            trunk: [
                Conv2d::new(&mut pb, "trunk1", hid, hid, 1, 1),
                Conv2d::new(&mut pb, "trunk2", hid, hid, 1, 1),
            ],
            decoder: Synthesis16::new(&mut pb, "decoder", lc, mid, cf),
            refine1: Conv2d::new(&mut pb, "refine1", 2 * cf, cf, 3, 1),
            refine2: Conv2d::new(&mut pb, "refine2", cf, cf, 3, 1),
            latent_channels: lc,
        }
    }

    pub fn groups(&self) -> Vec<usize> {
        self.chunks.iter().map(|c| c.width).collect()
    }

    pub fn encode<T: Real>(&self, g: &mut Graph<T>, f_cur: Var, f_pred: Var) -> Result<Var> {
        let (a, b) = (g.shape(f_cur), g.shape(f_pred));
        if a != b {
            return Err(Error::Shape(format!("current feature {a:?} vs predicted {b:?}")));
        }
        let x = g.concat(&[f_cur, f_pred]);
        Ok(self.encoder.forward(g, x))
    }

    pub fn hyper_encode<T: Real>(&self, g: &mut Graph<T>, c: Var) -> Var {
        self.hyper_encoder.forward(g, c)
    }

    /// Temporal context fused with the hyper prior: `2·C` channels on the latent grid.
    pub fn temporal_context<T: Real>(&self, g: &mut Graph<T>, f_pred: Var, s_hat: Var) -> Var {
        let t = self.temporal_encoder.forward(g, f_pred);
        let hyper = self.hyper_decoder.forward(g, s_hat);
        let x = g.concat(&[t, hyper]);
        let h = self.prior_fusion1.forward(g, x);
        let h = leaky(g, h);
        self.prior_fusion2.forward(g, h)
    }

    /// `(mu, sigma)` for every position of chunk `k`.
    ///
    /// `prev` holds the decoded chunks before `k` (`None` for `k = 0`); `anchors` is
    /// chunk `k` with non-anchors zeroed, or `None` during the anchor pass.
    pub fn entropy_params<T: Real>(
        &self,
        g: &mut Graph<T>,
        k: usize,
        prev: Option<Var>,
        anchors: Option<Var>,
        temporal: Var,
    ) -> Result<(Var, Var)> {
        let nets = self.chunks.get(k).ok_or_else(|| Error::InvalidArgument(format!("chunk {k} does not exist")))?;
        let [n, _, h, w] = g.shape(temporal);
        let width = TEMPORAL_PER_CHANNEL * nets.width;
        let temporal_k = g.slice_channels(temporal, TEMPORAL_PER_CHANNEL * nets.offset, width);
        let channel = match (&nets.channel, prev) {
            (None, None) => g.constant(Tensor::zeros([n, width, h, w])),
            (Some((c1, c2)), Some(p)) => {
                if g.shape(p)[1] != nets.offset {
                    return Err(Error::Precondition(format!(
                        "chunk {k} needs {} decoded channels, got {}",
                        nets.offset,
                        g.shape(p)[1]
                    )));
                }
                let hh = c1.forward(g, p);
                let hh = leaky(g, hh);
                c2.forward(g, hh)
            }
            _ => return Err(Error::Precondition(format!("chunk {k}: previous chunks must be given exactly when k > 0"))),
        };
        let spatial = match anchors {
            None => g.constant(Tensor::zeros([n, width, h, w])),
            Some(a) => nets.spatial.forward(g, a),
        };
        let x = g.concat(&[temporal_k, spatial, channel]);
        let hh = nets.input.forward(g, x);
        let hh = leaky(g, hh);
        let hh = self.trunk[0].forward(g, hh);
        let hh = leaky(g, hh);
        let hh = self.trunk[1].forward(g, hh);
        let hh = leaky(g, hh);
        let out = nets.head.forward(g, hh);
        Ok(gaussian_params(g, out, nets.width))
    }

    /// Decoder-side synthesis and refinement.
    pub fn reconstruct<T: Real>(&self, g: &mut Graph<T>, c_hat: Var, f_pred: Var) -> Var {
        let f_tilde = self.decoder.forward(g, c_hat);
        self.refine(g, f_tilde, f_pred)
    }

    pub fn refine<T: Real>(&self, g: &mut Graph<T>, f_tilde: Var, f_pred: Var) -> Var {
        let x = g.concat(&[f_tilde, f_pred]);
        let h = self.refine1.forward(g, x);
        let h = leaky(g, h);
        let h = self.refine2.forward(g, h);
        g.add(f_tilde, h)
    }

    /// Differentiable pass computing all chunk parameters from the (noisy) latent at once.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, f_cur: Var, f_pred: Var, q: &mut Quantizer) -> Result<ContextForward> {
        let c = self.encode(g, f_cur, f_pred)?;
        let s = self.hyper_encode(g, c);
        let s_hat = q.apply(g, s);
        let temporal = self.temporal_context(g, f_pred, s_hat);
        let c_hat = q.apply(g, c);
        let shape = g.shape(c_hat);
        let mut mus = Vec::new();
        let mut sigmas = Vec::new();
        for k in 0..self.chunks.len() {
            let (off, gk) = (self.chunks[k].offset, self.chunks[k].width);
            let chunk = g.slice_channels(c_hat, off, gk);
            let prev = (k > 0).then(|| g.slice_channels(c_hat, 0, off));
            let (mu_a, sig_a) = self.entropy_params(g, k, prev, None, temporal)?;
            let m = anchor_mask::<T>([shape[0], gk, shape[2], shape[3]]);
            let inv = m.map(|v| T::ONE - v);
            let mask = g.constant(m);
            let inv = g.constant(inv);
            let anchors = g.mul(chunk, mask);
            let (mu_n, sig_n) = self.entropy_params(g, k, prev, Some(anchors), temporal)?;
            let select = |g: &mut Graph<T>, a: Var, b: Var| {
                let a = g.mul(a, mask);
                let b = g.mul(b, inv);
                g.add(a, b)
            };
            mus.push(select(g, mu_a, mu_n));
            sigmas.push(select(g, sig_a, sig_n));
        }
        let mu = g.concat(&mus);
        let sigma = g.concat(&sigmas);
        let bc = gaussian_bits_var(g, c_hat, mu, sigma);
        let bits_c = g.sum(bc);
        let bs = self.prior.bits(g, s_hat);
        let bits_s = g.sum(bs);
        let f_hat = self.reconstruct(g, c_hat, f_pred);
        Ok(ContextForward {
            f_hat,
            c_hat,
            s_hat,
            mu,
            sigma,
            bits_c,
            bits_s,
        })
    }

    /// Evaluates chunk parameters in a fresh eval-mode graph. Encoder and decoder
    /// both call this, which keeps their parameters bit-identical.
    pub fn chunk_params<T: Real>(
        &self,
        ps: &ParamStore<T>,
        k: usize,
        prev: Option<&Tensor<T>>,
        anchors: Option<&Tensor<T>>,
        temporal: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new(ps, Mode::Eval);
        let t = g.constant(temporal.clone());
        let p = prev.map(|p| g.constant(p.clone()));
        let a = anchors.map(|a| g.constant(a.clone()));
        let (mu, sigma) = self.entropy_params(&mut g, k, p, a, t)?;
        Ok((g.value(mu).clone(), g.value(sigma).clone()))
    }

    /// Codes `c_hat` (already rounded) as eight segments.
    pub fn code_latent(&self, ps: &ParamStore<f32>, c_hat: &Tensor<f32>, temporal: &Tensor<f32>) -> Result<ContextCoded> {
        let mut segments = Vec::with_capacity(2 * self.chunks.len());
        let mut mus = Vec::new();
        let mut sigmas = Vec::new();
        for (k, nets) in self.chunks.iter().enumerate() {
            let chunk = c_hat.slice_channels(nets.offset, nets.width);
            let prev = (k > 0).then(|| c_hat.slice_channels(0, nets.offset));
            let (mu_a, sig_a) = self.chunk_params(ps, k, prev.as_ref(), None, temporal)?;
            segments.push(encode_gaussian(&chunk, &mu_a, &sig_a, |[_, _, y, x]| is_anchor(y, x))?);
            let anchors = keep_anchors(&chunk);
            let (mu_n, sig_n) = self.chunk_params(ps, k, prev.as_ref(), Some(&anchors), temporal)?;
            segments.push(encode_gaussian(&chunk, &mu_n, &sig_n, |[_, _, y, x]| !is_anchor(y, x))?);
            mus.push(merge_passes(&mu_a, &mu_n));
            sigmas.push(merge_passes(&sig_a, &sig_n));
        }
        Ok(ContextCoded {
            segments,
            c_hat: c_hat.clone(),
            params: LatentParams {
                mu: cat(&mus),
                sigma: cat(&sigmas),
            },
        })
    }

    /// Inverse of [`Self::code_latent`].
    pub fn decode_latent(
        &self,
        ps: &ParamStore<f32>,
        segments: &[&[u8]],
        shape: [usize; 4],
        temporal: &Tensor<f32>,
    ) -> Result<(Tensor<f32>, LatentParams<f32>)> {
        if segments.len() != 2 * self.chunks.len() {
            return Err(Error::Format(format!("expected {} context segments, got {}", 2 * self.chunks.len(), segments.len())));
        }
        let [n, _, h, w] = shape;
        let mut decoded: Vec<Tensor<f32>> = Vec::new();
        let mut mus = Vec::new();
        let mut sigmas = Vec::new();
        for (k, nets) in self.chunks.iter().enumerate() {
            let prev = (k > 0).then(|| cat(&decoded));
            let mut chunk = Tensor::zeros([n, nets.width, h, w]);
            let (mu_a, sig_a) = self.chunk_params(ps, k, prev.as_ref(), None, temporal)?;
            decode_gaussian(segments[2 * k], &mu_a, &sig_a, |[_, _, y, x]| is_anchor(y, x), &mut chunk)?;
            let anchors = keep_anchors(&chunk);
            let (mu_n, sig_n) = self.chunk_params(ps, k, prev.as_ref(), Some(&anchors), temporal)?;
            decode_gaussian(segments[2 * k + 1], &mu_n, &sig_n, |[_, _, y, x]| !is_anchor(y, x), &mut chunk)?;
            mus.push(merge_passes(&mu_a, &mu_n));
            sigmas.push(merge_passes(&sig_a, &sig_n));
            decoded.push(chunk);
        }
        Ok((
            cat(&decoded),
            LatentParams {
                mu: cat(&mus),
                sigma: cat(&sigmas),
            },
        ))
    }
}

fn merge_passes<T: Real>(anchor: &Tensor<T>, non_anchor: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(anchor.shape(), |i| if is_anchor(i[2], i[3]) { anchor.at(i) } else { non_anchor.at(i) })
}

fn cat<T: Real>(parts: &[Tensor<T>]) -> Tensor<T> {
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Tensor::cat_channels(&refs)
}

/// Estimated bits of the contextual latent per channel and per channel group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntropyReport {
    pub channel_bits: Vec<f64>,
    pub group_sizes: Vec<usize>,
    pub group_bits: Vec<f64>,
    /// Sum of `group_bits`.
    pub total_bits: f64,
}

pub fn channel_entropy_report(c_hat: &Tensor<f32>, params: &LatentParams<f32>, groups: &[usize]) -> Result<ChannelEntropyReport> {
    let [n, c, h, w] = c_hat.shape();
    if params.mu.shape() != c_hat.shape() || params.sigma.shape() != c_hat.shape() {
        return Err(Error::Shape("entropy params must match the latent".into()));
    }
    if groups.iter().sum::<usize>() != c {
        return Err(Error::Shape(format!("groups {groups:?} do not partition {c} channels")));
    }
    let channel_bits: Vec<f64> = (0..c)
        .map(|ch| {
            let mut bits = 0.0;
            for b in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let i = [b, ch, y, x];
                        bits += gaussian_bits(c_hat.at(i) as f64, params.mu.at(i) as f64, params.sigma.at(i) as f64);
                    }
                }
            }
            bits
        })
        .collect();
    let mut group_bits = Vec::with_capacity(groups.len());
    let mut start = 0;
    for &g in groups {
        group_bits.push(channel_bits[start..start + g].iter().sum());
        start += g;
    }
    let total_bits = group_bits.iter().sum();
    Ok(ChannelEntropyReport {
        channel_bits,
        group_sizes: groups.to_vec(),
        group_bits,
        total_bits,
    })
}
