//! Per-sequence evaluation report built from a decoded container.

use serde::{Deserialize, Serialize};

use crate::contextual::{channel_entropy_report, ChannelEntropyReport};
use crate::error::{Error, Result};
use crate::metrics::{ms_ssim_with, psnr, RDPoint};
use crate::pipeline::{container_stats, output_frame, BitstreamContainer, Codec};
use crate::video_io::{FrameType, RawSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub frame_type: FrameType,
    pub bpp: f64,
    pub psnr: f64,
    pub msssim: f64,
    /// Actual bytes per substream.
    pub substream_bytes: Vec<usize>,
    /// Contextual-latent entropy per channel group (P frames only).
    pub channel_groups: Option<ChannelEntropyReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub lambda: f64,
    /// Container payload bits / (W·H·n_frames).
    pub bpp: f64,
    pub psnr: f64,
    pub msssim: f64,
    /// Scales used for MS-SSIM (five unless the frames are small).
    pub msssim_scales: usize,
    pub payload_bits: usize,
    pub container_bytes: usize,
    pub frames: Vec<FrameReport>,
    /// Channel-group entropies summed over all P frames.
    pub channel_groups: Option<ChannelEntropyReport>,
}

impl SequenceReport {
    pub fn rd_point(&self) -> RDPoint {
        RDPoint {
            lambda: self.lambda,
            bpp: self.bpp,
            psnr: self.psnr,
            msssim: self.msssim,
        }
    }
}

fn merge(acc: &mut Option<ChannelEntropyReport>, r: &ChannelEntropyReport) {
    match acc {
        None => *acc = Some(r.clone()),
        Some(a) => {
            a.channel_bits.iter_mut().zip(&r.channel_bits).for_each(|(x, y)| *x += y);
            a.group_bits.iter_mut().zip(&r.group_bits).for_each(|(x, y)| *x += y);
            a.total_bits = a.group_bits.iter().sum();
        }
    }
}

/// Decodes `container` and scores it against `source`. All bit counts are actual byte counts
/// except the channel-group entropies, which are the model's estimate for the decoded latent.
pub fn evaluate_sequence(codec: &Codec, source: &RawSequence, container: &BitstreamContainer) -> Result<SequenceReport> {
    let h = &container.header;
    let (w, ht) = (h.width as usize, h.height as usize);
    if (w, ht) != (source.width, source.height) || h.n_frames as usize != source.len() {
        return Err(Error::Shape(format!(
            "container is {w}x{ht}x{}, source is {}x{}x{}",
            h.n_frames,
            source.width,
            source.height,
            source.len()
        )));
    }
    let decoded = codec.decode_frames(container)?;
    let stats = container_stats(container);
    let groups = codec.model.contextual.groups();
    let mut frames = Vec::with_capacity(decoded.len());
    let mut total_groups = None;
    let mut scales = 5;
    for ((d, s), src) in decoded.iter().zip(&stats).zip(&source.frames) {
        let out = output_frame(&d.x_hat, w, ht);
        let ms = ms_ssim_with(src, &out, true)?;
        scales = ms.scales;
        let channel_groups = match (&d.context_params, d.latents.last()) {
            (Some(p), Some(c_hat)) if s.frame_type == FrameType::P => {
                let r = channel_entropy_report(c_hat, p, &groups)?;
                merge(&mut total_groups, &r);
                Some(r)
            }
            _ => None,
        };
        frames.push(FrameReport {
            index: s.index,
            frame_type: s.frame_type,
            bpp: s.bpp,
            psnr: psnr(src, &out)?,
            msssim: ms.score,
            substream_bytes: s.substream_bytes.clone(),
            channel_groups,
        });
    }
    let n = frames.len().max(1) as f64;
    let payload_bits = container.payload_bits();
    Ok(SequenceReport {
        width: w,
        height: ht,
        n_frames: frames.len(),
        lambda: codec.model.config.lambda,
        bpp: payload_bits as f64 / (w * ht * frames.len().max(1)) as f64,
        psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        msssim: frames.iter().map(|f| f.msssim).sum::<f64>() / n,
        msssim_scales: scales,
        payload_bits,
        container_bytes: container.encoded_len(),
        frames,
        channel_groups: total_groups,
    })
}
