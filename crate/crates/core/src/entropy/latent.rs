//! Coding whole latent grids (or a masked subset) into one byte stream.

use ctxvc_autograd::Tensor;

use super::gaussian::gaussian_table;
use super::range_coder::{RangeDecoder, RangeEncoder};
use super::tables::FreqTable;
use crate::error::{Error, Result};

/// One coded substream together with the cost the quantized model assigns to it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CodedSegment {
    pub bytes: Vec<u8>,
    /// `Σ -log2(freq / total)` plus escape bits, i.e. the ideal length under the integer tables.
    pub model_bits: f64,
    pub symbols: usize,
}

impl CodedSegment {
    pub fn bits(&self) -> usize {
        self.bytes.len() * 8
    }
}

fn to_symbol(v: f32) -> Result<i64> {
    if !v.is_finite() || v != v.round() {
        return Err(Error::InvalidArgument(format!("latent value {v} is not an integer")));
    }
    Ok(v as i64)
}

fn check_same(a: &Tensor<f32>, b: &Tensor<f32>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Codes the positions of `q` selected by `select` in NCHW raster order under
/// per-element Gaussians.
pub fn encode_gaussian(
    q: &Tensor<f32>,
    mu: &Tensor<f32>,
    sigma: &Tensor<f32>,
    select: impl Fn([usize; 4]) -> bool,
) -> Result<CodedSegment> {
    check_same(q, mu, "mu")?;
    check_same(q, sigma, "sigma")?;
    let mut enc = RangeEncoder::new();
    let mut model_bits = 0.0;
    let mut symbols = 0;
    for_each_selected(q.shape(), &select, |i| {
        let table = gaussian_table(mu.data()[i], sigma.data()[i]);
        let s = to_symbol(q.data()[i])?;
        table.encode(&mut enc, s)?;
        model_bits += table.cost_bits(s);
        symbols += 1;
        Ok(())
    })?;
    Ok(CodedSegment {
        bytes: enc.finish(),
        model_bits,
        symbols,
    })
}

/// Inverse of [`encode_gaussian`]; writes decoded symbols into `out` and leaves
/// unselected positions untouched.
pub fn decode_gaussian(
    bytes: &[u8],
    mu: &Tensor<f32>,
    sigma: &Tensor<f32>,
    select: impl Fn([usize; 4]) -> bool,
    out: &mut Tensor<f32>,
) -> Result<()> {
    check_same(out, mu, "mu")?;
    check_same(out, sigma, "sigma")?;
    let mut dec = RangeDecoder::new(bytes);
    for_each_selected(out.shape(), &select, |i| {
        let table = gaussian_table(mu.data()[i], sigma.data()[i]);
        out.data_mut()[i] = table.decode(&mut dec)? as f32;
        Ok(())
    })
}

/// Codes every element of `q` with the table of its channel.
pub fn encode_factorized(q: &Tensor<f32>, tables: &[FreqTable]) -> Result<CodedSegment> {
    let [_, c, _, _] = q.shape();
    if c != tables.len() {
        return Err(Error::Shape(format!("{c} channels, {} tables", tables.len())));
    }
    let mut enc = RangeEncoder::new();
    let mut model_bits = 0.0;
    let mut symbols = 0;
    let plane = q.plane();
    for (i, &v) in q.data().iter().enumerate() {
        let table = &tables[(i / plane) % c];
        let s = to_symbol(v)?;
        table.encode(&mut enc, s)?;
        model_bits += table.cost_bits(s);
        symbols += 1;
    }
    Ok(CodedSegment {
        bytes: enc.finish(),
        model_bits,
        symbols,
    })
}

pub fn decode_factorized(bytes: &[u8], shape: [usize; 4], tables: &[FreqTable]) -> Result<Tensor<f32>> {
    if shape[1] != tables.len() {
        return Err(Error::Shape(format!("{} channels, {} tables", shape[1], tables.len())));
    }
    let mut out = Tensor::zeros(shape);
    let plane = out.plane();
    let mut dec = RangeDecoder::new(bytes);
    for i in 0..out.len() {
        out.data_mut()[i] = tables[(i / plane) % shape[1]].decode(&mut dec)? as f32;
    }
    Ok(out)
}

fn for_each_selected(
    shape: [usize; 4],
    select: &impl Fn([usize; 4]) -> bool,
    mut f: impl FnMut(usize) -> Result<()>,
) -> Result<()> {
    let [n, c, h, w] = shape;
    let mut i = 0;
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if select([b, ch, y, x]) {
                        f(i)?;
                    }
                    i += 1;
                }
            }
        }
    }
    Ok(())
}
