//! Byte-wise rANS over a 16-symbol alphabet with 16-bit probability precision.
//!
//! State lives in `[2^23, 2^31)`. The encoder walks symbols back to front and
//! collects renormalization bytes; the output is the final state as four
//! little-endian bytes followed by those bytes in reverse, so the decoder
//! reads strictly forward and ends in the initial state.

use crate::entropy::cdf::{IntegerCdf, PROB_BITS};
use crate::error::{Error, Result};

pub const STATE_LOWER: u32 = 1 << 23;
const STATE_UPPER: u64 = 1 << 31;
const SLOT_MASK: u32 = (1 << PROB_BITS) - 1;
/// `x_max = ((L >> PROB_BITS) << 8) * freq`.
const RENORM_FACTOR: u32 = (STATE_LOWER >> PROB_BITS) << 8;

/// Encodes `symbols[i]` under `cdfs[i]`.
pub fn rans_encode(symbols: &[u8], cdfs: &[IntegerCdf]) -> Result<Vec<u8>> {
    if symbols.len() != cdfs.len() {
        return Err(Error::Usage(format!(
            "{} symbols but {} cdfs",
            symbols.len(),
            cdfs.len()
        )));
    }
    let mut state = STATE_LOWER;
    let mut renorm: Vec<u8> = Vec::with_capacity(symbols.len() / 4 + 8);
    for (i, (&s, cdf)) in symbols.iter().zip(cdfs).enumerate().rev() {
        if s as usize >= 16 {
            return Err(Error::Usage(format!("symbol {s} at {i} exceeds alphabet")));
        }
        let freq = cdf.count(s as usize);
        let start = cdf.start(s as usize);
        let x_max = RENORM_FACTOR * freq;
        while state >= x_max {
            renorm.push(state as u8);
            state >>= 8;
        }
        state = ((state / freq) << PROB_BITS) + (state % freq) + start;
    }
    let mut out = Vec::with_capacity(renorm.len() + 4);
    out.extend_from_slice(&state.to_le_bytes());
    out.extend(renorm.iter().rev());
    Ok(out)
}

/// Decodes `count` symbols. `provider(i, decoded)` must return the CDF the
/// encoder used for position `i`, given the symbols decoded so far.
pub fn rans_decode<F>(bytes: &[u8], count: usize, mut provider: F) -> Result<Vec<u8>>
where
    F: FnMut(usize, &[u8]) -> IntegerCdf,
{
    let Some(head) = bytes.get(..4) else {
        return Err(Error::CorruptStream(format!(
            "rANS stream of {} bytes has no initial state",
            bytes.len()
        )));
    };
    let mut state = u32::from_le_bytes(head.try_into().unwrap());
    if state < STATE_LOWER || state as u64 >= STATE_UPPER {
        return Err(Error::CorruptStream(format!(
            "initial rANS state {state:#x} out of range"
        )));
    }
    let mut pos = 4;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let cdf = provider(i, &out);
        let slot = state & SLOT_MASK;
        let s = cdf.symbol_at(slot);
        state = cdf.count(s) * (state >> PROB_BITS) + slot - cdf.start(s);
        while state < STATE_LOWER {
            let Some(&b) = bytes.get(pos) else {
                return Err(Error::CorruptStream(format!(
                    "rANS stream exhausted after {i} of {count} symbols"
                )));
            };
            state = (state << 8) | b as u32;
            pos += 1;
        }
        out.push(s as u8);
    }
    if state != STATE_LOWER {
        return Err(Error::Integrity(format!(
            "final rANS state {state:#x} differs from the initial state"
        )));
    }
    if pos != bytes.len() {
        return Err(Error::Integrity(format!(
            "{} unread bytes after decoding {count} symbols",
            bytes.len() - pos
        )));
    }
    Ok(out)
}

/// Decodes with a fixed per-position CDF list.
pub fn rans_decode_with(bytes: &[u8], cdfs: &[IntegerCdf]) -> Result<Vec<u8>> {
    rans_decode(bytes, cdfs.len(), |i, _| cdfs[i])
}
