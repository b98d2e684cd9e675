//! Raw video ingest (PNG sequences, planar YUV 4:2:0), padding and GOP scheduling.

use std::fs;
use std::path::Path;

use ctxvc_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar RGB picture with samples in `[0, 1]`, layout `[3, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), 3 * width * height, "frame buffer size");
        Frame { width, height, data }
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Frame::new(width, height, vec![v; 3 * width * height])
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let p = self.width * self.height;
        &self.data[c * p..(c + 1) * p]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec([1, 3, self.height, self.width], self.data.clone())
    }

    /// Takes batch item 0 of a `[n, 3, h, w]` tensor.
    pub fn from_tensor(t: &Tensor<f32>) -> Self {
        let [_, c, h, w] = t.shape();
        assert_eq!(c, 3, "frame tensors have 3 channels");
        Frame::new(w, h, t.item(0).to_vec())
    }

    pub fn clamped(&self) -> Self {
        Frame::new(self.width, self.height, self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub frames: Vec<Frame>,
    pub width: usize,
    pub height: usize,
    /// Metadata only.
    pub frame_rate: f64,
}

impl RawSequence {
    pub fn new(frames: Vec<Frame>, frame_rate: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("a sequence needs at least one frame".into()))?;
        let (width, height) = first.dims();
        if frames.iter().any(|f| f.dims() != (width, height)) {
            return Err(Error::Shape("all frames of a sequence must share dimensions".into()));
        }
        Ok(RawSequence {
            frames,
            width,
            height,
            frame_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    PngDir,
    Yuv420,
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "png_dir" | "png" => Ok(SourceFormat::PngDir),
            "yuv420" | "yuv" | "i420" => Ok(SourceFormat::Yuv420),
            other => Err(Error::InvalidArgument(format!("unknown source format {other}"))),
        }
    }
}

pub fn png_frame_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

/// Loads `n_frames` frames. `width`/`height` are required for YUV and checked for PNG.
pub fn load_sequence(path: &Path, format: SourceFormat, width: usize, height: usize, n_frames: usize) -> Result<RawSequence> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be at least 1".into()));
    }
    let frames = match format {
        SourceFormat::PngDir => (0..n_frames)
            .map(|i| {
                let f = read_png(&path.join(png_frame_name(i)))?;
                if (width, height) != (0, 0) && f.dims() != (width, height) {
                    return Err(Error::Dimensions {
                        width: f.width,
                        height: f.height,
                        reason: "png size differs from the requested size",
                    });
                }
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?,
        SourceFormat::Yuv420 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_yuv420(&bytes, width, height, n_frames)?
        }
    };
    RawSequence::new(frames, 30.0)
}

pub fn read_png(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut f = Frame::filled(w, h, 0.0);
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            f.set(c, y as usize, x as usize, px[c] as f32 / 255.0);
        }
    }
    Ok(f)
}

pub fn write_png(frame: &Frame, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(frame.width as u32, frame.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            px[c] = to_u8(frame.get(c, y as usize, x as usize));
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_png_dir(seq: &RawSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_png(f, &dir.join(png_frame_name(i)))?;
    }
    Ok(())
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// BT.601 full-range YCbCr (8-bit code values) to RGB in `[0, 1]`.
#[inline]
pub fn yuv_to_rgb(y: f64, u: f64, v: f64) -> [f32; 3] {
    let (cb, cr) = (u - 128.0, v - 128.0);
    let r = y + 1.402 * cr;
    let g = y - 0.344_136 * cb - 0.714_136 * cr;
    let b = y + 1.772 * cb;
    [r, g, b].map(|c| (c / 255.0).clamp(0.0, 1.0) as f32)
}

/// Inverse of [`yuv_to_rgb`], producing 8-bit code values.
#[inline]
pub fn rgb_to_yuv(r: f32, g: f32, b: f32) -> [u8; 3] {
    let (r, g, b) = (r as f64 * 255.0, g as f64 * 255.0, b as f64 * 255.0);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let u = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
    let v = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
    [y, u, v].map(|c| c.round().clamp(0.0, 255.0) as u8)
}

pub fn parse_yuv420(bytes: &[u8], width: usize, height: usize, n_frames: usize) -> Result<Vec<Frame>> {
    if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
        return Err(Error::Dimensions {
            width,
            height,
            reason: "yuv420 needs positive even dimensions",
        });
    }
    let luma = width * height;
    let chroma = luma / 4;
    let frame_bytes = luma + 2 * chroma;
    let needed = frame_bytes * n_frames;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let cw = width / 2;
    Ok((0..n_frames)
        .map(|i| {
            let base = &bytes[i * frame_bytes..(i + 1) * frame_bytes];
            let (yp, rest) = base.split_at(luma);
            let (up, vp) = rest.split_at(chroma);
            let mut f = Frame::filled(width, height, 0.0);
            for y in 0..height {
                for x in 0..width {
                    let ci = (y / 2) * cw + x / 2;
                    let rgb = yuv_to_rgb(yp[y * width + x] as f64, up[ci] as f64, vp[ci] as f64);
                    for (c, v) in rgb.into_iter().enumerate() {
                        f.set(c, y, x, v);
                    }
                }
            }
            f
        })
        .collect())
}

/// Planar I420 with 2×2 chroma averaging.
pub fn encode_yuv420(seq: &RawSequence) -> Result<Vec<u8>> {
    let (w, h) = (seq.width, seq.height);
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Dimensions {
            width: w,
            height: h,
            reason: "yuv420 needs even dimensions",
        });
    }
    let mut out = Vec::with_capacity(seq.len() * w * h * 3 / 2);
    for f in &seq.frames {
        let mut yp = vec![0u8; w * h];
        let mut up = vec![0f64; w * h / 4];
        let mut vp = vec![0f64; w * h / 4];
        for y in 0..h {
            for x in 0..w {
                let [yy, u, v] = rgb_to_yuv(f.get(0, y, x), f.get(1, y, x), f.get(2, y, x));
                yp[y * w + x] = yy;
                let ci = (y / 2) * (w / 2) + x / 2;
                up[ci] += u as f64 / 4.0;
                vp[ci] += v as f64 / 4.0;
            }
        }
        out.extend_from_slice(&yp);
        out.extend(up.iter().map(|v| v.round() as u8));
        out.extend(vp.iter().map(|v| v.round() as u8));
    }
    Ok(out)
}

/// Pads to the smallest multiple of `multiple` in each dimension by edge replication.
/// Returns the padded frame and the original `(width, height)`.
pub fn pad_to_multiple(frame: &Frame, multiple: usize) -> (Frame, (usize, usize)) {
    assert!(multiple >= 1, "pad multiple must be at least 1");
    let (w, h) = frame.dims();
    let pw = w.div_ceil(multiple) * multiple;
    let ph = h.div_ceil(multiple) * multiple;
    if (pw, ph) == (w, h) {
        return (frame.clone(), (w, h));
    }
    let mut out = Frame::filled(pw, ph, 0.0);
    for c in 0..3 {
        for y in 0..ph {
            for x in 0..pw {
                out.set(c, y, x, frame.get(c, y.min(h - 1), x.min(w - 1)));
            }
        }
    }
    (out, (w, h))
}

pub fn crop(frame: &Frame, width: usize, height: usize) -> Frame {
    assert!(width <= frame.width && height <= frame.height, "crop larger than frame");
    let mut out = Frame::filled(width, height, 0.0);
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                out.set(c, y, x, frame.get(c, y, x));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameType {
    I,
    P,
}

impl FrameType {
    pub fn code(self) -> u8 {
        match self {
            FrameType::I => 0,
            FrameType::P => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FrameType::I),
            1 => Some(FrameType::P),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GopSchedule {
    pub frame_types: Vec<FrameType>,
    pub gop_size: usize,
}

pub fn gop_schedule(n_frames: usize, gop_size: usize) -> Result<GopSchedule> {
    if n_frames == 0 || gop_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "gop schedule needs positive arguments, got n_frames={n_frames} gop_size={gop_size}"
        )));
    }
    let frame_types = (0..n_frames)
        .map(|i| if i % gop_size == 0 { FrameType::I } else { FrameType::P })
        .collect();
    Ok(GopSchedule { frame_types, gop_size })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use FrameType::{I, P};

    /// Independent evaluation of the BT.601 full-range matrix.
    fn bt601_oracle(y: f64, u: f64, v: f64) -> [f64; 3] {
        let m = [[1.0, 0.0, 1.402], [1.0, -0.344136, -0.714136], [1.0, 1.772, 0.0]];
        let yuv = [y, u - 128.0, v - 128.0];
        m.map(|row| row.iter().zip(yuv).map(|(a, b)| a * b).sum::<f64>() / 255.0)
    }

    #[test]
    fn mid_gray_yuv_maps_to_mid_gray_rgb() {
        let expect = bt601_oracle(128.0, 128.0, 128.0);
        assert!((expect[0] - 0.50196).abs() < 1e-4);
        let bytes = vec![128u8; 4 * 4 * 3 / 2];
        let frames = parse_yuv420(&bytes, 4, 4, 1).unwrap();
        for c in 0..3 {
            assert!((frames[0].get(c, 1, 2) as f64 - expect[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn yuv_matches_matrix_oracle_on_colours() {
        for &(y, u, v) in &[(81.0, 90.0, 240.0), (145.0, 54.0, 34.0), (41.0, 240.0, 110.0), (200.0, 100.0, 150.0)] {
            let got = yuv_to_rgb(y, u, v);
            let want = bt601_oracle(y, u, v).map(|c| c.clamp(0.0, 1.0));
            for c in 0..3 {
                assert!((got[c] as f64 - want[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn yuv_errors() {
        assert!(matches!(parse_yuv420(&[0; 10], 3, 4, 1), Err(Error::Dimensions { .. })));
        assert!(matches!(parse_yuv420(&[0; 23], 4, 4, 1), Err(Error::Truncated { needed: 24, available: 23 })));
        let missing = load_sequence(Path::new("/nonexistent/clip.yuv"), SourceFormat::Yuv420, 4, 4, 1);
        assert!(matches!(missing, Err(Error::Io { .. })));
    }

    #[test]
    fn png_dir_round_trip_and_count() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..7).map(|i| Frame::filled(6, 4, i as f32 / 10.0)).collect();
        let seq = RawSequence::new(frames, 30.0).unwrap();
        write_png_dir(&seq, dir.path()).unwrap();
        let back = load_sequence(dir.path(), SourceFormat::PngDir, 6, 4, 7).unwrap();
        assert_eq!(back.len(), 7);
        assert!((back.frames[3].get(1, 2, 2) - 0.3).abs() <= 0.5 / 255.0);
    }

    #[test]
    fn black_png_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&Frame::filled(5, 3, 0.0), &dir.path().join(png_frame_name(0))).unwrap();
        let seq = load_sequence(dir.path(), SourceFormat::PngDir, 5, 3, 1).unwrap();
        assert_eq!(seq.len(), 1);
        assert!(seq.frames[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_png_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_sequence(dir.path(), SourceFormat::PngDir, 0, 0, 1),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn padding_examples() {
        let f = Frame::filled(64, 64, 0.2);
        assert_eq!(pad_to_multiple(&f, 64).0, f);
        let g = Frame::filled(65, 70, 0.2);
        let (p, dims) = pad_to_multiple(&g, 64);
        assert_eq!((p.width, p.height, dims), (128, 128, (65, 70)));
    }

    #[test]
    fn gop_examples() {
        assert_eq!(gop_schedule(5, 2).unwrap().frame_types, vec![I, P, I, P, I]);
        let s = gop_schedule(12, 12).unwrap().frame_types;
        assert_eq!(s[0], I);
        assert!(s[1..].iter().all(|&t| t == P) && s.len() == 12);
        assert_eq!(gop_schedule(1, 10).unwrap().frame_types, vec![I]);
        assert!(gop_schedule(0, 10).is_err());
        assert!(gop_schedule(3, 0).is_err());
    }

    proptest! {
        #[test]
        fn crop_inverts_pad(w in 1usize..90, h in 1usize..90, m in 1usize..70, seed in any::<u64>()) {
            let data = (0..3 * w * h).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f32 / 999.0).collect();
            let f = Frame::new(w, h, data);
            let (p, (ow, oh)) = pad_to_multiple(&f, m);
            prop_assert_eq!(p.width % m, 0);
            prop_assert_eq!(p.height % m, 0);
            prop_assert!(p.width < w + m && p.height < h + m);
            prop_assert_eq!(crop(&p, ow, oh), f);
        }

        #[test]
        fn rgb_yuv_rgb_within_two_codes(r in 0u8..=255, g in 0u8..=255, b in 0u8..=255) {
            let rgb = [r, g, b].map(|v| v as f32 / 255.0);
            let [y, u, v] = rgb_to_yuv(rgb[0], rgb[1], rgb[2]);
            let back = yuv_to_rgb(y as f64, u as f64, v as f64);
            for c in 0..3 {
                prop_assert!((back[c] - rgb[c]).abs() < 2.0 / 255.0, "{:?} -> {:?}", rgb, back);
            }
        }

        #[test]
        fn gop_is_pure(n in 1usize..200, gop in 1usize..30) {
            let a = gop_schedule(n, gop).unwrap();
            prop_assert_eq!(&a, &gop_schedule(n, gop).unwrap());
            prop_assert_eq!(a.frame_types.len(), n);
            for (i, t) in a.frame_types.iter().enumerate() {
                prop_assert_eq!(*t == FrameType::I, i % gop == 0);
            }
        }
    }
}
