//! Byte layout of a coded sequence. All integers little-endian.
//!
//! ```text
//! header  : "MSTC" | version u8 | width u16 | height u16 | n_frames u16 | gop u8 | lambda_id u8
//! frame   : frame_type u8 | len u32 × substreams(frame_type) | payloads | crc32 u32
//! ```
//! The crc covers the frame type, the length table and the payloads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video_io::FrameType;

pub const MAGIC: &[u8; 4] = b"MSTC";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 13;

/// Substreams of an I frame: hyper latent, image latent.
pub const I_SUBSTREAMS: usize = 2;
/// Substreams of a P frame: motion hyper, motion, context hyper, then eight context segments.
pub const P_SUBSTREAMS: usize = 11;

pub fn substream_count(t: FrameType) -> usize {
    match t {
        FrameType::I => I_SUBSTREAMS,
        FrameType::P => P_SUBSTREAMS,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub version: u8,
    pub width: u16,
    pub height: u16,
    pub n_frames: u16,
    pub gop: u8,
    pub lambda_id: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub frame_type: FrameType,
    pub substreams: Vec<Vec<u8>>,
}

impl FrameRecord {
    pub fn new(frame_type: FrameType, substreams: Vec<Vec<u8>>) -> Result<Self> {
        if substreams.len() != substream_count(frame_type) {
            return Err(Error::Format(format!(
                "{frame_type:?} frame needs {} substreams, got {}",
                substream_count(frame_type),
                substreams.len()
            )));
        }
        Ok(FrameRecord { frame_type, substreams })
    }

    pub fn payload_bytes(&self) -> usize {
        self.substreams.iter().map(Vec::len).sum()
    }

    /// Serialized size including type byte, length table and crc.
    pub fn encoded_len(&self) -> usize {
        1 + 4 * self.substreams.len() + self.payload_bytes() + 4
    }

    fn write(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.push(self.frame_type.code());
        for s in &self.substreams {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        }
        for s in &self.substreams {
            out.extend_from_slice(s);
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitstreamContainer {
    pub header: Header,
    pub frames: Vec<FrameRecord>,
}

/// Outcome of parsing one frame record without aborting on checksum failures.
#[derive(Debug)]
pub struct ParsedFrame {
    pub frame_type: FrameType,
    pub record: Result<FrameRecord>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl BitstreamContainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        let h = &self.header;
        out.extend_from_slice(MAGIC);
        out.push(h.version);
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.extend_from_slice(&h.n_frames.to_le_bytes());
        out.push(h.gop);
        out.push(h.lambda_id);
        for f in &self.frames {
            f.write(&mut out);
        }
        out
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + self.frames.iter().map(FrameRecord::encoded_len).sum::<usize>()
    }

    /// Bits of all substream payloads (framing excluded).
    pub fn payload_bits(&self) -> usize {
        8 * self.frames.iter().map(FrameRecord::payload_bytes).sum::<usize>()
    }

    /// Strict parse: any checksum failure is an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, frames) = Self::parse_lenient(bytes)?;
        let frames = frames.into_iter().map(|f| f.record).collect::<Result<Vec<_>>>()?;
        Ok(BitstreamContainer { header, frames })
    }

    /// Parses the header and every frame, reporting checksum failures per frame so
    /// later frames stay decodable. Structural damage (bad lengths) is still fatal.
    pub fn parse_lenient(bytes: &[u8]) -> Result<(Header, Vec<ParsedFrame>)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header = Header {
            version,
            width: r.u16()?,
            height: r.u16()?,
            n_frames: r.u16()?,
            gop: r.u8()?,
            lambda_id: r.u8()?,
        };
        let mut frames = Vec::with_capacity(header.n_frames as usize);
        for index in 0..header.n_frames as usize {
            let start = r.pos;
            let code = r.u8()?;
            let frame_type = FrameType::from_code(code).ok_or_else(|| Error::Format(format!("frame {index}: unknown type {code}")))?;
            let lens = (0..substream_count(frame_type)).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let substreams = lens
                .iter()
                .map(|&l| r.take(l as usize).map(<[u8]>::to_vec))
                .collect::<Result<Vec<_>>>()?;
            let computed = crc32fast::hash(&bytes[start..r.pos]);
            let stored = r.u32()?;
            let record = if stored == computed {
                Ok(FrameRecord { frame_type, substreams })
            } else {
                Err(Error::Crc { frame: index, stored, computed })
            };
            frames.push(ParsedFrame { frame_type, record });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok((header, frames))
    }
}

/// Byte range of frame `index`'s payloads within the serialized container.
pub fn payload_range(c: &BitstreamContainer, index: usize) -> std::ops::Range<usize> {
    let before: usize = HEADER_BYTES + c.frames[..index].iter().map(FrameRecord::encoded_len).sum::<usize>();
    let f = &c.frames[index];
    let start = before + 1 + 4 * f.substreams.len();
    start..start + f.payload_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BitstreamContainer {
        BitstreamContainer {
            header: Header {
                version: VERSION,
                width: 70,
                height: 65,
                n_frames: 2,
                gop: 10,
                lambda_id: 3,
            },
            frames: vec![
                FrameRecord::new(FrameType::I, vec![vec![1, 2, 3], vec![4; 10]]).unwrap(),
                FrameRecord::new(FrameType::P, (0..11).map(|i| vec![i as u8; i]).collect()).unwrap(),
            ],
        }
    }

    #[test]
    fn round_trip_and_size() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), c.encoded_len());
        assert_eq!(bytes.len(), HEADER_BYTES + c.frames.iter().map(|f| f.encoded_len()).sum::<usize>());
        assert_eq!(BitstreamContainer::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn corruption_is_detected_per_frame() {
        let c = sample();
        let mut bytes = c.to_bytes();
        let r = payload_range(&c, 0);
        bytes[r.start + 1] ^= 0x40;
        assert!(matches!(BitstreamContainer::from_bytes(&bytes), Err(Error::Crc { frame: 0, .. })));
        let (_, frames) = BitstreamContainer::parse_lenient(&bytes).unwrap();
        assert!(frames[0].record.is_err());
        assert_eq!(frames[1].record.as_ref().unwrap(), &c.frames[1]);
    }

    #[test]
    fn truncation_and_bad_counts() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            BitstreamContainer::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(FrameRecord::new(FrameType::P, vec![vec![]; 2]).is_err());
        assert!(matches!(BitstreamContainer::from_bytes(b"XXXX"), Err(Error::Format(_))));
    }
}
