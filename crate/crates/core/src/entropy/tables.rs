//! Integer frequency tables shared by encoder and decoder, with an escape bin for
//! symbols outside the modelled support.

use super::range_coder::{RangeDecoder, RangeEncoder, PROB_TOTAL};
use crate::error::{Error, Result};

/// Quantized symbols must lie in `[-SYMBOL_LIMIT, SYMBOL_LIMIT)`.
pub const SYMBOL_LIMIT: i64 = 1 << 15;

/// Frequencies for symbols `lo..lo + n` followed by one escape bin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqTable {
    lo: i64,
    /// Cumulative frequencies, length `n + 2`; the last interval is the escape bin.
    cum: Vec<u32>,
}

impl FreqTable {
    /// `probs[i]` is the mass of symbol `lo + i`; `tail` the mass outside. Every bin
    /// gets at least one count and the remainder goes to the first most likely bin.
    pub fn from_probs(lo: i64, probs: &[f64], tail: f64) -> Self {
        let n = probs.len() + 1;
        assert!(n < PROB_TOTAL as usize / 2, "support too wide for 16-bit table");
        let scale = (PROB_TOTAL as usize - n) as f64;
        let mut freq: Vec<u32> = probs
            .iter()
            .chain(std::iter::once(&tail))
            .map(|&p| 1 + (p.clamp(0.0, 1.0) * scale).floor() as u32)
            .collect();
        let total: u32 = freq.iter().sum();
        let mut best = 0;
        for (i, &f) in freq.iter().enumerate() {
            if f > freq[best] {
                best = i;
            }
        }
        freq[best] += PROB_TOTAL.checked_sub(total).expect("frequency overflow");
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0);
        let mut acc = 0;
        for f in freq {
            acc += f;
            cum.push(acc);
        }
        FreqTable { lo, cum }
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    /// Inclusive upper end of the direct support.
    pub fn hi(&self) -> i64 {
        self.lo + self.cum.len() as i64 - 3
    }

    fn escape_index(&self) -> usize {
        self.cum.len() - 2
    }

    pub fn freq(&self, index: usize) -> u32 {
        self.cum[index + 1] - self.cum[index]
    }

    fn index_of(&self, symbol: i64) -> Option<usize> {
        (self.lo..=self.hi()).contains(&symbol).then(|| (symbol - self.lo) as usize)
    }

    pub fn encode(&self, enc: &mut RangeEncoder, symbol: i64) -> Result<()> {
        check_symbol(symbol)?;
        match self.index_of(symbol) {
            Some(i) => enc.encode(self.cum[i], self.freq(i)),
            None => {
                let e = self.escape_index();
                enc.encode(self.cum[e], self.freq(e));
                let (above, dist) = self.escape_parts(symbol);
                enc.encode_bit(above);
                exp_golomb_encode(enc, dist);
            }
        }
        Ok(())
    }

    pub fn decode(&self, dec: &mut RangeDecoder) -> Result<i64> {
        let t = dec.target();
        // partition_point gives the first bin whose upper edge exceeds t
        let i = self.cum[1..].partition_point(|&c| c <= t);
        dec.consume(self.cum[i], self.freq(i));
        if i != self.escape_index() {
            return Ok(self.lo + i as i64);
        }
        let above = dec.decode_bit();
        let dist = exp_golomb_decode(dec)? as i64;
        let s = if above { self.hi() + 1 + dist } else { self.lo - 1 - dist };
        check_symbol(s)?;
        Ok(s)
    }

    fn escape_parts(&self, symbol: i64) -> (bool, u64) {
        if symbol > self.hi() {
            (true, (symbol - self.hi() - 1) as u64)
        } else {
            (false, (self.lo - 1 - symbol) as u64)
        }
    }

    /// Exact cost in bits of coding `symbol` under this quantized table.
    pub fn cost_bits(&self, symbol: i64) -> f64 {
        let total = PROB_TOTAL as f64;
        match self.index_of(symbol) {
            Some(i) => -(self.freq(i) as f64 / total).log2(),
            None => {
                let e = self.escape_index();
                let (_, dist) = self.escape_parts(symbol);
                -(self.freq(e) as f64 / total).log2() + 1.0 + exp_golomb_len(dist) as f64
            }
        }
    }
}

fn check_symbol(s: i64) -> Result<()> {
    if (-SYMBOL_LIMIT..SYMBOL_LIMIT).contains(&s) {
        Ok(())
    } else {
        Err(Error::SymbolOutOfRange { symbol: s })
    }
}

fn exp_golomb_len(d: u64) -> u32 {
    let nb = 64 - (d + 1).leading_zeros();
    2 * nb - 1
}

fn exp_golomb_encode(enc: &mut RangeEncoder, d: u64) {
    let v = d + 1;
    let nb = 64 - v.leading_zeros();
    for _ in 1..nb {
        enc.encode_bit(false);
    }
    for i in (0..nb).rev() {
        enc.encode_bit((v >> i) & 1 == 1);
    }
}

fn exp_golomb_decode(dec: &mut RangeDecoder) -> Result<u64> {
    let mut zeros = 0;
    while !dec.decode_bit() {
        zeros += 1;
        if zeros > 20 {
            return Err(Error::Format("escape code too long".into()));
        }
    }
    let mut v = 1u64;
    for _ in 0..zeros {
        v = (v << 1) | dec.decode_bit() as u64;
    }
    Ok(v - 1)
}
