//! Range coder over [`ChannelTable`]s with 16-bit frequencies.
//!
//! # Payload format
//!
//! The coder keeps a 32-bit `range` and a 33-bit `low` (bit 32 is a pending
//! carry). Coding a slot with cumulative frequency `cum` and frequency `freq`
//! sets `r = range >> 16`, `low += r * cum`, `range = r * freq`. While
//! `range < 2^24`, the top byte of `low` is shifted out and `range <<= 8`.
//!
//! Shifted bytes pass through a one-byte cache plus a count of pending `0xFF`
//! bytes so that a carry out of bit 32 can be added to bytes not yet written
//! (carry propagation instead of forcing the interval). The very first cached
//! byte is always zero and is not written.
//!
//! To finish, `low` is rounded up to the next multiple of `2^16` (which lies
//! inside the final interval because `range >= 2^24`) and its two top bytes
//! are written. The decoder reads bytes past the end as zero; since the final
//! value ends in 16 zero bits, the two bytes it reads past the end are exactly
//! the ones the encoder left out. Reading more than two bytes past the end
//! means the input was truncated.
//!
//! Values outside a channel's support are coded as the escape slot followed
//! by the value's 32-bit two's-complement representation as two 16-bit
//! chunks (high first), each coded with `cum = chunk`, `freq = 1`.
//!
//! Symbols are coded in the order given (the codec uses channel-major order,
//! one symbol per channel).

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;

use crate::entropy::{ChannelTable, FREQ_BITS};
use crate::{Error, Result};

const TOP: u32 = 1 << 24;
/// Bytes the decoder may legitimately read past the end of a payload.
const FLUSH_SLACK: usize = 2;

/// One coded value: the channel table it uses and the integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Symbol {
    pub channel: usize,
    pub value: i32,
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, pending: 1, first: true, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || self.low >> 32 != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            while self.pending > 0 {
                if self.first {
                    debug_assert_eq!(byte.wrapping_add(carry), 0);
                    self.first = false;
                } else {
                    self.out.push(byte.wrapping_add(carry));
                }
                byte = 0xFF;
                self.pending -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes the interval `[cum, cum + freq)` out of `2^16`.
    pub fn encode_interval(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= 1 << FREQ_BITS);
        let r = self.range >> FREQ_BITS;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode(&mut self, table: &ChannelTable, value: i32) {
        match table.slot_of(value) {
            Some(slot) => self.encode_interval(table.cumulative[slot], table.frequency(slot)),
            None => {
                let slot = table.escape_slot();
                self.encode_interval(table.cumulative[slot], table.frequency(slot));
                let raw = value as u32;
                self.encode_interval(raw >> 16, 1);
                self.encode_interval(raw & 0xFFFF, 1);
            }
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let mask = (1u64 << 16) - 1;
        self.low = (self.low + mask) & !mask;
        for _ in 0..3 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self { data, pos: 0, code: 0, range: u32::MAX };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        if self.pos > self.data.len() + FLUSH_SLACK {
            return Err(Error::Truncated(format!(
                "range decoder needs more than the {} payload bytes",
                self.data.len()
            )));
        }
        Ok(b)
    }

    /// Position of the next symbol inside `[0, 2^16)`.
    fn target(&self) -> Result<(u32, u32)> {
        let r = self.range >> FREQ_BITS;
        let t = self.code / r;
        if t >= 1 << FREQ_BITS {
            return Err(Error::Format { offset: self.pos, reason: "corrupt range-coded payload".into() });
        }
        Ok((r, t))
    }

    fn consume(&mut self, r: u32, cum: u32, freq: u32) -> Result<()> {
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    fn raw16(&mut self) -> Result<u32> {
        let (r, t) = self.target()?;
        self.consume(r, t, 1)?;
        Ok(t)
    }

    pub fn decode(&mut self, table: &ChannelTable) -> Result<i32> {
        let (r, t) = self.target()?;
        let slot = table.find_slot(t);
        self.consume(r, table.cumulative[slot], table.frequency(slot))?;
        if slot == table.escape_slot() {
            let hi = self.raw16()?;
            let lo = self.raw16()?;
            Ok(((hi << 16) | lo) as i32)
        } else {
            Ok(table.z_min + slot as i32)
        }
    }
}

fn table_for(tables: &[ChannelTable], channel: usize) -> Result<&ChannelTable> {
    tables
        .get(channel)
        .ok_or_else(|| Error::InvalidArgument(format!("no table for channel {channel}")))
}

/// Codes `symbols` in order.
pub fn range_encode(symbols: &[Symbol], tables: &[ChannelTable]) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    for s in symbols {
        enc.encode(table_for(tables, s.channel)?, s.value);
    }
    Ok(enc.finish())
}

/// Decodes `channels.len()` symbols, the i-th against table `channels[i]`.
pub fn range_decode(bytes: &[u8], tables: &[ChannelTable], channels: &[usize]) -> Result<Vec<Symbol>> {
    let mut dec = RangeDecoder::new(bytes)?;
    channels
        .iter()
        .map(|&channel| Ok(Symbol { channel, value: dec.decode(table_for(tables, channel)?)? }))
        .collect()
}

/// Ideal cost in bits of `symbols` under `tables` (escapes include their 32 raw bits).
pub fn ideal_bits(symbols: &[Symbol], tables: &[ChannelTable]) -> Result<f64> {
    let mut bits = 0.0;
    for s in symbols {
        let t = table_for(tables, s.channel)?;
        bits += match t.slot_of(s.value) {
            Some(slot) => -t.probability(slot).log2(),
            None => 32.0 - t.probability(t.escape_slot()).log2(),
        };
    }
    Ok(bits)
}
