//! Deterministic coding of deep, mostly single-child levels.
//!
//! Each level splits its nodes into unary ones (exactly one child, stored as
//! a packed 3-bit child index) and non-unary ones (positions stored with
//! Elias-Fano, occupancy bytes stored raw). No model and no entropy coder is
//! involved, so every substream size follows from the counts alone.
//!
//! All bit packing is LSB-first within each byte, zero-padded to a byte
//! boundary.

use crate::error::{Error, Result};

/// Nodes of one level split by popcount, positions in coding order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    /// `(position, k)` with `occ[position] == 1 << k`.
    pub unary: Vec<(u32, u8)>,
    pub non_unary: Vec<u32>,
}

pub fn partition(occ: &[u8]) -> Result<Partition> {
    let mut p = Partition::default();
    for (i, &o) in occ.iter().enumerate() {
        match o.count_ones() {
            0 => return Err(Error::Invariant(format!("occupancy code 0 at node {i}"))),
            1 => p.unary.push((i as u32, o.trailing_zeros() as u8)),
            _ => p.non_unary.push(i as u32),
        }
    }
    Ok(p)
}

struct BitWriter {
    bytes: Vec<u8>,
    bit: usize,
}

impl BitWriter {
    fn with_bits(bits: usize) -> Self {
        Self {
            bytes: vec![0; bits.div_ceil(8)],
            bit: 0,
        }
    }

    fn push(&mut self, value: u64, width: u32) {
        for b in 0..width {
            if (value >> b) & 1 == 1 {
                self.bytes[self.bit / 8] |= 1 << (self.bit % 8);
            }
            self.bit += 1;
        }
    }

    fn set(&mut self, bit: usize) {
        self.bytes[bit / 8] |= 1 << (bit % 8);
    }
}

#[inline]
fn read_bits(bytes: &[u8], start: usize, width: u32) -> u64 {
    let mut v = 0u64;
    for b in 0..width as usize {
        let i = start + b;
        v |= (((bytes[i / 8] >> (i % 8)) & 1) as u64) << b;
    }
    v
}

/// Elias-Fano low-part width: 0 when `M = 0` or `U <= M`, else `floor(log2(U / M))`.
pub fn ef_low_width(m: u64, universe: u64) -> u32 {
    if m == 0 || universe <= m {
        0
    } else {
        (universe / m).ilog2()
    }
}

/// Exact bit length of the high-part vector: `M + (U >> Llow) + 1`.
pub fn ef_high_bits(m: u64, universe: u64, low_width: u32) -> u64 {
    m + (universe >> low_width) + 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EliasFano {
    pub low_width: u32,
    pub high: Vec<u8>,
    pub low: Vec<u8>,
}

pub fn ef_encode(indices: &[u32], universe: u32) -> Result<EliasFano> {
    if universe == 0 {
        return Err(Error::Usage("Elias-Fano universe must be at least 1".into()));
    }
    for (i, &x) in indices.iter().enumerate() {
        if x >= universe {
            return Err(Error::Usage(format!("index {x} outside universe {universe}")));
        }
        if i > 0 && indices[i - 1] >= x {
            return Err(Error::Usage(format!("indices not strictly increasing at {i}")));
        }
    }
    let m = indices.len() as u64;
    let u = universe as u64;
    let low_width = ef_low_width(m, u);
    let mut low = BitWriter::with_bits((m * low_width as u64) as usize);
    let mut high = BitWriter::with_bits(ef_high_bits(m, u, low_width) as usize);
    let mask = (1u64 << low_width) - 1;
    for (i, &x) in indices.iter().enumerate() {
        low.push(x as u64 & mask, low_width);
        high.set(((x as u64 >> low_width) as usize) + i);
    }
    Ok(EliasFano {
        low_width,
        high: high.bytes,
        low: low.bytes,
    })
}

pub fn ef_decode(
    low_width: u32,
    high: &[u8],
    low: &[u8],
    m: usize,
    universe: u32,
) -> Result<Vec<u32>> {
    if low_width > 31 {
        return Err(Error::CorruptStream(format!("Elias-Fano low width {low_width}")));
    }
    let low_bits = m as u64 * low_width as u64;
    if (low.len() as u64) * 8 < low_bits {
        return Err(Error::CorruptStream(format!(
            "Elias-Fano low part has {} bytes, needs {low_bits} bits",
            low.len()
        )));
    }
    let mut out = Vec::with_capacity(m);
    let mut bit = 0usize;
    let total_bits = high.len() * 8;
    while out.len() < m {
        // Skip whole zero bytes.
        if bit % 8 == 0 && bit < total_bits && high[bit / 8] == 0 {
            bit += 8;
            continue;
        }
        if bit >= total_bits {
            return Err(Error::CorruptStream(format!(
                "Elias-Fano high part exhausted after {} of {m} elements",
                out.len()
            )));
        }
        if (high[bit / 8] >> (bit % 8)) & 1 == 1 {
            let i = out.len();
            let hi = (bit - i) as u64;
            let lo = read_bits(low, i * low_width as usize, low_width);
            let x = (hi << low_width) | lo;
            if x >= universe as u64 {
                return Err(Error::CorruptStream(format!(
                    "Elias-Fano element {x} outside universe {universe}"
                )));
            }
            if let Some(&prev) = out.last() {
                if prev as u64 >= x {
                    return Err(Error::CorruptStream(
                        "Elias-Fano elements not strictly increasing".into(),
                    ));
                }
            }
            out.push(x as u32);
        }
        bit += 1;
    }
    Ok(out)
}

pub fn pack3(ks: &[u8]) -> Result<Vec<u8>> {
    let mut w = BitWriter::with_bits(ks.len() * 3);
    for (i, &k) in ks.iter().enumerate() {
        if k > 7 {
            return Err(Error::Usage(format!("child index {k} at {i} exceeds 7")));
        }
        w.push(k as u64, 3);
    }
    Ok(w.bytes)
}

pub fn unpack3(bytes: &[u8], count: usize) -> Result<Vec<u8>> {
    if bytes.len() < (count * 3).div_ceil(8) {
        return Err(Error::CorruptStream(format!(
            "{} bytes cannot hold {count} 3-bit symbols",
            bytes.len()
        )));
    }
    Ok((0..count).map(|i| read_bits(bytes, i * 3, 3) as u8).collect())
}

/// One encoded deep level, laid out as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeepLevelStream {
    pub nu: u32,
    pub msplit: u32,
    pub low_width: u32,
    pub ef_high: Vec<u8>,
    pub ef_low: Vec<u8>,
    pub unary_k: Vec<u8>,
    pub nonunary_occ: Vec<u8>,
}

impl DeepLevelStream {
    pub fn payload_len(&self) -> usize {
        self.ef_high.len() + self.ef_low.len() + self.unary_k.len() + self.nonunary_occ.len()
    }
}

/// Closed-form payload size for a level with `nu` nodes, `msplit` non-unary.
pub fn deep_payload_size(nu: u64, msplit: u64) -> u64 {
    let lw = ef_low_width(msplit, nu);
    (3 * (nu - msplit)).div_ceil(8)
        + msplit
        + ef_high_bits(msplit, nu, lw).div_ceil(8)
        + (msplit * lw as u64).div_ceil(8)
}

pub fn encode_deep_level(occ: &[u8]) -> Result<DeepLevelStream> {
    let nu = u32::try_from(occ.len())
        .map_err(|_| Error::Usage("deep level exceeds u32 nodes".into()))?;
    let part = partition(occ)?;
    let ks: Vec<u8> = part.unary.iter().map(|&(_, k)| k).collect();
    let ef = ef_encode(&part.non_unary, nu.max(1))?;
    Ok(DeepLevelStream {
        nu,
        msplit: part.non_unary.len() as u32,
        low_width: ef.low_width,
        ef_high: ef.high,
        ef_low: ef.low,
        unary_k: pack3(&ks)?,
        nonunary_occ: part.non_unary.iter().map(|&i| occ[i as usize]).collect(),
    })
}

pub fn decode_deep_level(s: &DeepLevelStream) -> Result<Vec<u8>> {
    let nu = s.nu as u64;
    let m = s.msplit as u64;
    if m > nu {
        return Err(Error::CorruptStream(format!("Msplit {m} exceeds Nu {nu}")));
    }
    let universe = nu.max(1);
    let lw = ef_low_width(m, universe);
    if s.low_width != lw {
        return Err(Error::CorruptStream(format!(
            "Elias-Fano low width {} does not match counts (expected {lw})",
            s.low_width
        )));
    }
    let expect = [
        ("ef_high", s.ef_high.len(), ef_high_bits(m, universe, lw).div_ceil(8)),
        ("ef_low", s.ef_low.len(), (m * lw as u64).div_ceil(8)),
        ("unary_k", s.unary_k.len(), (3 * (nu - m)).div_ceil(8)),
        ("nonunary_occ", s.nonunary_occ.len(), m),
    ];
    for (name, got, want) in expect {
        if got as u64 != want {
            return Err(Error::CorruptStream(format!(
                "{name} has {got} bytes, counts imply {want}"
            )));
        }
    }

    let split = ef_decode(lw, &s.ef_high, &s.ef_low, m as usize, universe as u32)?;
    let ks = unpack3(&s.unary_k, (nu - m) as usize)?;
    let mut occ = Vec::with_capacity(nu as usize);
    let mut next_split = split.iter().zip(&s.nonunary_occ).peekable();
    let mut next_k = ks.into_iter();
    for i in 0..s.nu {
        match next_split.peek() {
            Some(&(&pos, &o)) if pos == i => {
                if o.count_ones() < 2 {
                    return Err(Error::CorruptStream(format!(
                        "non-unary node {i} carries code {o:#04x}"
                    )));
                }
                occ.push(o);
                next_split.next();
            }
            _ => occ.push(1 << next_k.next().unwrap()),
        }
    }
    Ok(occ)
}
