//! Sequence-level encode and decode: I frames, the P-frame loop and the
//! reconstruction buffer. Every quantity the decoder needs is produced on the
//! encoder side by the same functions the decoder calls.

pub mod container;

use ctxvc_autograd::{Graph, Mode, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::lambda_id;
use crate::contextual::LatentParams;
use crate::entropy::{
    decode_factorized, decode_gaussian, encode_factorized, encode_gaussian, quantize_eval, CodedSegment,
};
use crate::error::{Error, Result};
use crate::model::CodecModel;
use crate::video_io::{crop, gop_schedule, pad_to_multiple, Frame, FrameType, RawSequence};

pub use container::{BitstreamContainer, FrameRecord, Header, ParsedFrame, HEADER_BYTES, MAGIC, VERSION};

/// Frames are padded to this multiple before coding.
pub const PAD_MULTIPLE: usize = 64;

/// Previous reconstruction (padded, unclamped) and its full-resolution feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconBuffer {
    pub frame: Tensor<f32>,
    pub feature: Tensor<f32>,
}

/// Per-frame accounting, always from actual byte counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub index: usize,
    pub frame_type: FrameType,
    /// Bytes per substream in container order.
    pub substream_bytes: Vec<usize>,
    /// Ideal cost of each substream under the integer tables.
    pub model_bits: Vec<f64>,
    pub bits: usize,
    pub bpp: f64,
    /// I: `[z, y]`. P: `[motion hyper, motion, context hyper, context]`.
    pub group_bits: Vec<usize>,
}

/// Everything produced when coding or decoding one frame.
#[derive(Clone, Debug)]
pub struct CodedFrame {
    pub record: FrameRecord,
    /// Padded, unclamped reconstruction.
    pub x_hat: Tensor<f32>,
    /// I: `[z_hat, y_hat]`. P: `[z_m_hat, m_hat, s_hat, c_hat]`.
    pub latents: Vec<Tensor<f32>>,
    pub context_params: Option<LatentParams<f32>>,
    pub model_bits: Vec<f64>,
}

/// Output of [`Codec::encode_sequence`].
#[derive(Clone, Debug)]
pub struct EncodedSequence {
    pub container: BitstreamContainer,
    pub stats: Vec<FrameStats>,
    /// Cropped, clamped reconstructions as the decoder will produce them.
    pub reconstructions: Vec<Frame>,
    pub frames: Vec<CodedFrame>,
}

/// Output of [`Codec::decode_sequence_lenient`].
#[derive(Debug)]
pub struct LenientDecode {
    pub frames: Vec<Frame>,
    /// `None` for frames decoded normally.
    pub errors: Vec<Option<Error>>,
}

pub struct Codec<'a> {
    pub model: &'a CodecModel,
    pub params: &'a ParamStore<f32>,
}

fn segment_bytes(segs: &[CodedSegment]) -> Vec<Vec<u8>> {
    segs.iter().map(|s| s.bytes.clone()).collect()
}

/// Cropped, clamped output picture.
pub fn output_frame(x_hat: &Tensor<f32>, width: usize, height: usize) -> Frame {
    crop(&Frame::from_tensor(x_hat), width, height).clamped()
}

impl<'a> Codec<'a> {
    pub fn new(model: &'a CodecModel, params: &'a ParamStore<f32>) -> Self {
        Codec { model, params }
    }

    fn graph(&self) -> Graph<'a, f32> {
        Graph::new(self.params, Mode::Eval)
    }

    fn eval1(&self, input: &Tensor<f32>, f: impl FnOnce(&mut Graph<'a, f32>, Var) -> Result<Var>) -> Result<Tensor<f32>> {
        let mut g = self.graph();
        let x = g.constant(input.clone());
        let y = f(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    fn check_dims(&self, t: &Tensor<f32>) -> Result<()> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 3 || h % PAD_MULTIPLE != 0 || w % PAD_MULTIPLE != 0 || h == 0 || w == 0 {
            return Err(Error::Dimensions {
                width: w,
                height: h,
                reason: "coded frames must be [1, 3, h, w] with h, w multiples of 64",
            });
        }
        Ok(())
    }

    fn hyper_shape(&self, channels: usize, h: usize, w: usize) -> [usize; 4] {
        [1, channels, h / 64, w / 64]
    }

    fn latent_shape(&self, channels: usize, h: usize, w: usize) -> [usize; 4] {
        [1, channels, h / 16, w / 16]
    }

    // ---- shared encoder/decoder functions ----

    pub fn buffer_from(&self, frame: Tensor<f32>) -> Result<ReconBuffer> {
        let feature = self.eval1(&frame, |g, x| Ok(self.model.extractor.pyramid(g, x).levels[0]))?;
        Ok(ReconBuffer { frame, feature })
    }

    fn intra_params(&self, z_hat: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut g = self.graph();
        let z = g.constant(z_hat.clone());
        let (mu, sigma) = self.model.intra.hyper_decode(&mut g, z);
        Ok((g.value(mu).clone(), g.value(sigma).clone()))
    }

    fn intra_reconstruct(&self, y_hat: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.eval1(y_hat, |g, y| Ok(self.model.intra.decode(g, y)))
    }

    fn motion_params(&self, z_hat: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut g = self.graph();
        let z = g.constant(z_hat.clone());
        let (mu, sigma) = self.model.motion_codec.hyper_decode(&mut g, z);
        Ok((g.value(mu).clone(), g.value(sigma).clone()))
    }

    /// Decoded motion to predicted feature.
    pub fn predict_feature(&self, m_hat: &Tensor<f32>, f_ref: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = self.graph();
        let m = g.constant(m_hat.clone());
        let r = g.constant(f_ref.clone());
        let v = self.model.motion_codec.decode(&mut g, m);
        let f = self.model.compensation.forward(&mut g, v, r)?;
        Ok(g.value(f).clone())
    }

    pub fn temporal_context(&self, f_pred: &Tensor<f32>, s_hat: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = self.graph();
        let f = g.constant(f_pred.clone());
        let s = g.constant(s_hat.clone());
        let t = self.model.contextual.temporal_context(&mut g, f, s);
        Ok(g.value(t).clone())
    }

    fn p_reconstruct(&self, c_hat: &Tensor<f32>, f_pred: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = self.graph();
        let c = g.constant(c_hat.clone());
        let f = g.constant(f_pred.clone());
        let fh = self.model.contextual.reconstruct(&mut g, c, f);
        let x = self.model.reconstructor.forward(&mut g, fh)?;
        Ok(g.value(x).clone())
    }

    // ---- I frames ----

    pub fn encode_i_frame(&self, x: &Tensor<f32>) -> Result<CodedFrame> {
        self.check_dims(x)?;
        let intra = &self.model.intra;
        let (y, z) = {
            let mut g = self.graph();
            let xv = g.constant(x.clone());
            let y = intra.encode(&mut g, xv);
            let z = intra.hyper_encode(&mut g, y);
            (g.value(y).clone(), g.value(z).clone())
        };
        let z_hat = quantize_eval(&z);
        let seg_z = encode_factorized(&z_hat, &intra.prior.tables(self.params))?;
        let (mu, sigma) = self.intra_params(&z_hat)?;
        let y_hat = quantize_eval(&y);
        let seg_y = encode_gaussian(&y_hat, &mu, &sigma, |_| true)?;
        let x_hat = self.intra_reconstruct(&y_hat)?;
        let segs = [seg_z, seg_y];
        Ok(CodedFrame {
            record: FrameRecord::new(FrameType::I, segment_bytes(&segs))?,
            x_hat,
            latents: vec![z_hat, y_hat],
            context_params: None,
            model_bits: segs.iter().map(|s| s.model_bits).collect(),
        })
    }

    /// `height`/`width` are the padded dimensions.
    pub fn decode_i_frame(&self, record: &FrameRecord, height: usize, width: usize) -> Result<CodedFrame> {
        if record.frame_type != FrameType::I {
            return Err(Error::Format("expected an I frame record".into()));
        }
        let intra = &self.model.intra;
        let z_shape = self.hyper_shape(intra.prior.channels, height, width);
        let z_hat = decode_factorized(&record.substreams[0], z_shape, &intra.prior.tables(self.params))?;
        let (mu, sigma) = self.intra_params(&z_hat)?;
        let mut y_hat = Tensor::zeros(self.latent_shape(intra.latent_channels, height, width));
        decode_gaussian(&record.substreams[1], &mu, &sigma, |_| true, &mut y_hat)?;
        let x_hat = self.intra_reconstruct(&y_hat)?;
        Ok(CodedFrame {
            record: record.clone(),
            x_hat,
            latents: vec![z_hat, y_hat],
            context_params: None,
            model_bits: Vec::new(),
        })
    }

    // ---- P frames ----

    pub fn encode_p_frame(&self, x: &Tensor<f32>, buffer: Option<&ReconBuffer>) -> Result<CodedFrame> {
        self.check_dims(x)?;
        let buffer = buffer.ok_or_else(|| Error::Precondition("P frame without a reconstructed reference".into()))?;
        if buffer.frame.shape() != x.shape() {
            return Err(Error::Shape(format!("frame {:?} vs reference {:?}", x.shape(), buffer.frame.shape())));
        }
        let m = &self.model;
        let (f_cur, motion) = {
            let mut g = self.graph();
            let xc = g.constant(x.clone());
            let xr = g.constant(buffer.frame.clone());
            let (pc, pr) = m.extractor.extract(&mut g, xc, xr)?;
            let v = m.motion_estimator.estimate(&mut g, &pc, &pr)?;
            let mv = m.motion_codec.encode(&mut g, v);
            (g.value(pc.levels[0]).clone(), g.value(mv).clone())
        };
        let z = self.eval1(&motion, |g, mv| Ok(m.motion_codec.hyper_encode(g, mv)))?;
        let z_hat = quantize_eval(&z);
        let seg_zm = encode_factorized(&z_hat, &m.motion_codec.prior.tables(self.params))?;
        let (mu, sigma) = self.motion_params(&z_hat)?;
        let m_hat = quantize_eval(&motion);
        let seg_m = encode_gaussian(&m_hat, &mu, &sigma, |_| true)?;
        let f_pred = self.predict_feature(&m_hat, &buffer.feature)?;

        let (c, s) = {
            let mut g = self.graph();
            let fc = g.constant(f_cur);
            let fp = g.constant(f_pred.clone());
            let c = m.contextual.encode(&mut g, fc, fp)?;
            let s = m.contextual.hyper_encode(&mut g, c);
            (g.value(c).clone(), g.value(s).clone())
        };
        let s_hat = quantize_eval(&s);
        let seg_s = encode_factorized(&s_hat, &m.contextual.prior.tables(self.params))?;
        let temporal = self.temporal_context(&f_pred, &s_hat)?;
        let c_hat = quantize_eval(&c);
        let coded = m.contextual.code_latent(self.params, &c_hat, &temporal)?;
        let x_hat = self.p_reconstruct(&c_hat, &f_pred)?;

        let mut segs = vec![seg_zm, seg_m, seg_s];
        segs.extend(coded.segments);
        Ok(CodedFrame {
            record: FrameRecord::new(FrameType::P, segment_bytes(&segs))?,
            x_hat,
            latents: vec![z_hat, m_hat, s_hat, c_hat],
            context_params: Some(coded.params),
            model_bits: segs.iter().map(|s| s.model_bits).collect(),
        })
    }

    pub fn decode_p_frame(&self, record: &FrameRecord, buffer: Option<&ReconBuffer>) -> Result<CodedFrame> {
        if record.frame_type != FrameType::P {
            return Err(Error::Format("expected a P frame record".into()));
        }
        let buffer = buffer.ok_or_else(|| Error::Precondition("P frame without a reconstructed reference".into()))?;
        let [_, _, h, w] = buffer.frame.shape();
        let m = &self.model;
        let ss = &record.substreams;
        let z_shape = self.hyper_shape(m.motion_codec.prior.channels, h, w);
        let z_hat = decode_factorized(&ss[0], z_shape, &m.motion_codec.prior.tables(self.params))?;
        let (mu, sigma) = self.motion_params(&z_hat)?;
        let mut m_hat = Tensor::zeros(self.latent_shape(m.motion_codec.latent_channels, h, w));
        decode_gaussian(&ss[1], &mu, &sigma, |_| true, &mut m_hat)?;
        let f_pred = self.predict_feature(&m_hat, &buffer.feature)?;
        let s_shape = self.hyper_shape(m.contextual.prior.channels, h, w);
        let s_hat = decode_factorized(&ss[2], s_shape, &m.contextual.prior.tables(self.params))?;
        let temporal = self.temporal_context(&f_pred, &s_hat)?;
        let segs: Vec<&[u8]> = ss[3..].iter().map(Vec::as_slice).collect();
        let c_shape = self.latent_shape(m.contextual.latent_channels, h, w);
        let (c_hat, params) = m.contextual.decode_latent(self.params, &segs, c_shape, &temporal)?;
        let x_hat = self.p_reconstruct(&c_hat, &f_pred)?;
        Ok(CodedFrame {
            record: record.clone(),
            x_hat,
            latents: vec![z_hat, m_hat, s_hat, c_hat],
            context_params: Some(params),
            model_bits: Vec::new(),
        })
    }

    // ---- sequences ----

    pub fn encode_sequence(&self, seq: &RawSequence, gop_size: usize) -> Result<EncodedSequence> {
        let schedule = gop_schedule(seq.len(), gop_size)?;
        if seq.width > u16::MAX as usize || seq.height > u16::MAX as usize || seq.len() > u16::MAX as usize || gop_size > 255 {
            return Err(Error::InvalidArgument("sequence too large for the container header".into()));
        }
        let header = Header {
            version: VERSION,
            width: seq.width as u16,
            height: seq.height as u16,
            n_frames: seq.len() as u16,
            gop: gop_size as u8,
            lambda_id: lambda_id(self.model.config.lambda),
        };
        let mut buffer: Option<ReconBuffer> = None;
        let mut out = EncodedSequence {
            container: BitstreamContainer { header, frames: Vec::new() },
            stats: Vec::new(),
            reconstructions: Vec::new(),
            frames: Vec::new(),
        };
        for (i, (frame, &ft)) in seq.frames.iter().zip(&schedule.frame_types).enumerate() {
            let x = pad_to_multiple(frame, PAD_MULTIPLE).0.to_tensor();
            let coded = match ft {
                FrameType::I => self.encode_i_frame(&x)?,
                FrameType::P => self.encode_p_frame(&x, buffer.as_ref())?,
            };
            out.stats.push(frame_stats(i, &coded.record, &coded.model_bits, seq.width, seq.height));
            out.reconstructions.push(output_frame(&coded.x_hat, seq.width, seq.height));
            buffer = Some(self.buffer_from(coded.x_hat.clone())?);
            out.container.frames.push(coded.record.clone());
            out.frames.push(coded);
        }
        Ok(out)
    }

    fn check_header(&self, header: &Header) -> Result<()> {
        let expected = lambda_id(self.model.config.lambda);
        if header.lambda_id != expected {
            return Err(Error::ModelMismatch(format!(
                "stream coded with lambda id {}, checkpoint has {expected}",
                header.lambda_id
            )));
        }
        Ok(())
    }

    fn padded_dims(header: &Header) -> (usize, usize) {
        let p = |v: u16| (v as usize).div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
        (p(header.height), p(header.width))
    }

    fn decode_record(&self, record: &FrameRecord, buffer: Option<&ReconBuffer>, h: usize, w: usize) -> Result<CodedFrame> {
        match record.frame_type {
            FrameType::I => self.decode_i_frame(record, h, w),
            FrameType::P => self.decode_p_frame(record, buffer),
        }
    }

    /// Decodes every frame, returning all decoder-side products.
    pub fn decode_frames(&self, container: &BitstreamContainer) -> Result<Vec<CodedFrame>> {
        self.check_header(&container.header)?;
        let (h, w) = Self::padded_dims(&container.header);
        let mut buffer: Option<ReconBuffer> = None;
        let mut out = Vec::with_capacity(container.frames.len());
        for record in &container.frames {
            let coded = self.decode_record(record, buffer.as_ref(), h, w)?;
            buffer = Some(self.buffer_from(coded.x_hat.clone())?);
            out.push(coded);
        }
        Ok(out)
    }

    pub fn decode_sequence(&self, container: &BitstreamContainer) -> Result<RawSequence> {
        let (w, h) = (container.header.width as usize, container.header.height as usize);
        let frames = self.decode_frames(container)?.iter().map(|c| output_frame(&c.x_hat, w, h)).collect();
        RawSequence::new(frames, 30.0)
    }

    /// Decodes what it can: a damaged frame and the P frames depending on it are
    /// replaced by the last good picture until the next I frame resets the buffer.
    pub fn decode_sequence_lenient(&self, bytes: &[u8]) -> Result<LenientDecode> {
        let (header, parsed) = BitstreamContainer::parse_lenient(bytes)?;
        self.check_header(&header)?;
        let (h, w) = Self::padded_dims(&header);
        let (ow, oh) = (header.width as usize, header.height as usize);
        let mut buffer: Option<ReconBuffer> = None;
        let mut broken = false;
        let mut last = Frame::filled(ow, oh, 0.5);
        let mut frames = Vec::new();
        let mut errors = Vec::new();
        for (i, pf) in parsed.into_iter().enumerate() {
            if pf.frame_type == FrameType::I {
                broken = false;
            }
            let result = match (&pf.record, broken) {
                (Err(_), _) => Err(pf.record.err().expect("checked above")),
                (Ok(_), true) => Err(Error::Precondition(format!("frame {i} references a damaged frame"))),
                (Ok(r), false) => self.decode_record(r, buffer.as_ref(), h, w),
            };
            match result {
                Ok(coded) => {
                    last = output_frame(&coded.x_hat, ow, oh);
                    buffer = Some(self.buffer_from(coded.x_hat)?);
                    errors.push(None);
                }
                Err(e) => {
                    broken = true;
                    errors.push(Some(e));
                }
            }
            frames.push(last.clone());
        }
        Ok(LenientDecode { frames, errors })
    }
}

pub fn frame_stats(index: usize, record: &FrameRecord, model_bits: &[f64], width: usize, height: usize) -> FrameStats {
    let substream_bytes: Vec<usize> = record.substreams.iter().map(Vec::len).collect();
    let bits = 8 * substream_bytes.iter().sum::<usize>();
    let group_bits = match record.frame_type {
        FrameType::I => substream_bytes.iter().map(|b| 8 * b).collect(),
        FrameType::P => vec![
            8 * substream_bytes[0],
            8 * substream_bytes[1],
            8 * substream_bytes[2],
            8 * substream_bytes[3..].iter().sum::<usize>(),
        ],
    };
    FrameStats {
        index,
        frame_type: record.frame_type,
        substream_bytes,
        model_bits: model_bits.to_vec(),
        bits,
        bpp: bits as f64 / (width * height) as f64,
        group_bits,
    }
}

/// Per-frame stats of a parsed container (decoder side, no model needed).
pub fn container_stats(c: &BitstreamContainer) -> Vec<FrameStats> {
    c.frames
        .iter()
        .enumerate()
        .map(|(i, r)| frame_stats(i, r, &[], c.header.width as usize, c.header.height as usize))
        .collect()
}
