//! Carry-less 64-bit range coder with 16-bit frequencies.

/// Every model is scaled to this total.
pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

const TOP: u64 = 1 << 56;
const BOT: u64 = 1 << 48;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
    symbols: usize,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
            symbols: 0,
        }
    }

    /// Codes the interval `[cum, cum + freq)` of a model with total [`PROB_TOTAL`].
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= PROB_TOTAL);
        let r = self.range >> PROB_BITS;
        self.low = self.low.wrapping_add(r * cum as u64);
        self.range = r * freq as u64;
        self.symbols += 1;
        self.normalize();
    }

    /// One equiprobable bit.
    pub fn encode_bit(&mut self, bit: bool) {
        let half = PROB_TOTAL / 2;
        self.encode(if bit { half } else { 0 }, half);
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Number of `encode` calls so far.
    pub fn symbol_count(&self) -> usize {
        self.symbols
    }

    /// Emits the fewest bytes whose zero-padded value leaves an aligned block inside
    /// the final interval, so the stream is never shorter than the model cost.
    pub fn finish(mut self) -> Vec<u8> {
        let low = self.low as u128;
        let high = low + self.range as u128;
        for k in 0..=8u32 {
            let block = 1u128 << (64 - 8 * k);
            let v = low.div_ceil(block) * block;
            if v + block <= high {
                for i in 0..k {
                    self.out.push((v >> (56 - 8 * i)) as u8);
                }
                return self.out;
            }
        }
        unreachable!("range never drops below one unit")
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    low: u64,
    range: u64,
    code: u64,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            low: 0,
            range: u64::MAX,
            code: 0,
            bytes,
            pos: 0,
        };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Value in `[0, PROB_TOTAL)` locating the next symbol; follow with [`Self::consume`].
    pub fn target(&self) -> u32 {
        let r = self.range >> PROB_BITS;
        let v = self.code.wrapping_sub(self.low) / r;
        v.min(PROB_TOTAL as u64 - 1) as u32
    }

    pub fn consume(&mut self, cum: u32, freq: u32) {
        let r = self.range >> PROB_BITS;
        self.low = self.low.wrapping_add(r * cum as u64);
        self.range = r * freq as u64;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn decode_bit(&mut self) -> bool {
        let half = PROB_TOTAL / 2;
        let bit = self.target() >= half;
        self.consume(if bit { half } else { 0 }, half);
        bit
    }
}
