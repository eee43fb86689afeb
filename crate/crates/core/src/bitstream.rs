//! Frame packet layout.
//!
//! ```text
//! header   title[8] "LEAN3D\0\1" | n_streams u32 | posQ u32 | N u32 | lens[n_streams] u32
//! stream 0 metadata  depths u32 | shallow_D u32 | fp_inv_step u32 | fp_B u32 | fp_KMAX u32
//!                    [| model_id u64]
//! stream 1 base      n0 u32 | n0 x (x, y, z) i32 | n0 x occ u8
//! then     per shallow level: s0 rANS stream, s1 rANS stream
//! then     per deep level:    Nu u32 | Msplit u32 | Llow u32 | 4 x byte length u32
//!                             | ef_high | ef_low | unary_k | nonunary_occ
//! ```
//!
//! All integers are little-endian. The stream count must equal
//! `2 + 2 * (shallow_D - 1) + (depths - shallow_D)`.

use crate::deepcodec::DeepLevelStream;
use crate::error::{Error, Result};
use crate::geometry::Voxel;

pub const TITLE: [u8; 8] = *b"LEAN3D\x00\x01";
pub const FIXED_HEADER_LEN: usize = 8 + 4 * 3;
/// Metadata stream length without the optional model fingerprint.
pub const METADATA_LEN: usize = 20;
/// Metadata stream length when it carries the model fingerprint.
pub const METADATA_LEN_WITH_MODEL: usize = METADATA_LEN + 8;
pub const DEEP_HEADER_LEN: usize = 28;

/// Integer entropy-coding parameters carried in every packet.
pub const FP_INV_STEP: u32 = 128;
pub const FP_B: u32 = 16;
pub const FP_KMAX: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metadata {
    /// Total pyramid depth L.
    pub depths: u32,
    /// Split depth D_s (always at least 1).
    pub shallow_d: u32,
    pub fp_inv_step: u32,
    pub fp_b: u32,
    pub fp_kmax: u32,
    /// Fingerprint of the model the shallow streams were coded with.
    pub model_id: Option<u64>,
}

impl Metadata {
    pub fn new(depths: u32, shallow_d: u32) -> Self {
        Self {
            depths,
            shallow_d,
            fp_inv_step: FP_INV_STEP,
            fp_b: FP_B,
            fp_kmax: FP_KMAX,
            model_id: None,
        }
    }

    pub fn with_model_id(self, id: u64) -> Self {
        Self {
            model_id: Some(id),
            ..self
        }
    }

    pub fn byte_len(&self) -> usize {
        match self.model_id {
            Some(_) => METADATA_LEN_WITH_MODEL,
            None => METADATA_LEN,
        }
    }

    pub fn shallow_levels(&self) -> usize {
        self.shallow_d.saturating_sub(1) as usize
    }

    pub fn deep_levels(&self) -> usize {
        self.depths.saturating_sub(self.shallow_d) as usize
    }

    /// `metadata + base + 2 per shallow level + 1 per deep level`.
    pub fn stream_count(&self) -> u64 {
        2 + 2 * self.shallow_levels() as u64 + self.deep_levels() as u64
    }

    fn check(&self) -> Result<()> {
        if self.depths < 1 || self.shallow_d < 1 || self.shallow_d > self.depths {
            return Err(Error::Format {
                offset: FIXED_HEADER_LEN,
                msg: format!(
                    "need 1 <= shallow_D <= depths, got shallow_D={} depths={}",
                    self.shallow_d, self.depths
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BaseStream {
    pub coords: Vec<Voxel>,
    pub occ: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ShallowStreams {
    pub s0: Vec<u8>,
    pub s1: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePacket {
    pub pos_q: u32,
    /// Number of voxels the frame decodes to.
    pub n_points: u32,
    pub metadata: Metadata,
    pub base: BaseStream,
    pub shallow: Vec<ShallowStreams>,
    pub deep: Vec<DeepLevelStream>,
}

impl FramePacket {
    pub fn n_streams(&self) -> usize {
        2 + 2 * self.shallow.len() + self.deep.len()
    }

    /// Byte length of every stream, in wire order.
    pub fn stream_lengths(&self) -> Vec<usize> {
        let mut lens = vec![self.metadata.byte_len(), 4 + 13 * self.base.coords.len()];
        for s in &self.shallow {
            lens.push(s.s0.len());
            lens.push(s.s1.len());
        }
        lens.extend(self.deep.iter().map(|d| DEEP_HEADER_LEN + d.payload_len()));
        lens
    }

    pub fn header_len(&self) -> usize {
        FIXED_HEADER_LEN + 4 * self.n_streams()
    }

    pub fn shallow_bytes(&self) -> usize {
        self.shallow.iter().map(|s| s.s0.len() + s.s1.len()).sum()
    }

    pub fn deep_bytes(&self) -> usize {
        self.deep
            .iter()
            .map(|d| DEEP_HEADER_LEN + d.payload_len())
            .sum()
    }

    fn check(&self) -> Result<()> {
        let internal = |msg: String| Error::Usage(format!("inconsistent packet: {msg}"));
        self.metadata.check().map_err(|e| internal(e.to_string()))?;
        if self.shallow.len() != self.metadata.shallow_levels() {
            return Err(internal(format!(
                "{} shallow stream pairs, metadata implies {}",
                self.shallow.len(),
                self.metadata.shallow_levels()
            )));
        }
        if self.deep.len() != self.metadata.deep_levels() {
            return Err(internal(format!(
                "{} deep streams, metadata implies {}",
                self.deep.len(),
                self.metadata.deep_levels()
            )));
        }
        if self.base.coords.len() != self.base.occ.len() {
            return Err(internal("base coords/occ length mismatch".into()));
        }
        if self.stream_lengths().iter().any(|&l| l > u32::MAX as usize) {
            return Err(internal("stream longer than u32".into()));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn serialize_frame(p: &FramePacket) -> Result<Vec<u8>> {
    p.check()?;
    let lens = p.stream_lengths();
    let mut out = Vec::with_capacity(p.header_len() + lens.iter().sum::<usize>());
    out.extend_from_slice(&TITLE);
    put_u32(&mut out, p.n_streams() as u32);
    put_u32(&mut out, p.pos_q);
    put_u32(&mut out, p.n_points);
    for &l in &lens {
        put_u32(&mut out, l as u32);
    }

    let m = &p.metadata;
    for v in [m.depths, m.shallow_d, m.fp_inv_step, m.fp_b, m.fp_kmax] {
        put_u32(&mut out, v);
    }
    if let Some(id) = m.model_id {
        out.extend_from_slice(&id.to_le_bytes());
    }

    put_u32(&mut out, p.base.coords.len() as u32);
    for c in &p.base.coords {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&p.base.occ);

    for s in &p.shallow {
        out.extend_from_slice(&s.s0);
        out.extend_from_slice(&s.s1);
    }

    for d in &p.deep {
        for v in [d.nu, d.msplit, d.low_width] {
            put_u32(&mut out, v);
        }
        for sub in [&d.ef_high, &d.ef_low, &d.unary_k, &d.nonunary_occ] {
            put_u32(&mut out, sub.len() as u32);
        }
        for sub in [&d.ef_high, &d.ef_low, &d.unary_k, &d.nonunary_occ] {
            out.extend_from_slice(sub);
        }
    }
    Ok(out)
}

/// Bounds-checked little-endian reader over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses exactly one packet that must span all of `bytes`.
pub fn parse_frame(bytes: &[u8]) -> Result<FramePacket> {
    let (packet, used) = parse_frame_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format {
            offset: used,
            msg: format!("{} trailing bytes after packet", bytes.len() - used),
        });
    }
    Ok(packet)
}

/// Parses one packet from the front of `bytes`, returning it with its size.
/// Used to walk concatenated multi-frame files.
pub fn parse_frame_prefix(bytes: &[u8]) -> Result<(FramePacket, usize)> {
    let mut r = Reader::new(bytes, 0);
    if r.take(8)? != TITLE {
        return Err(Error::Format {
            offset: 0,
            msg: "bad packet signature".into(),
        });
    }
    let n_streams = r.u32()? as usize;
    let pos_q = r.u32()?;
    let n_points = r.u32()?;
    if n_streams < 2 {
        return Err(Error::Format {
            offset: 8,
            msg: format!("{n_streams} streams, at least 2 required"),
        });
    }
    // Lengths table must fit before anything is allocated for it.
    let lens_at = r.pos;
    let lens_raw = r.take(n_streams.checked_mul(4).ok_or_else(|| Error::Format {
        offset: 8,
        msg: "stream count overflows".into(),
    })?)?;
    let lens: Vec<usize> = lens_raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();

    let payload_start = r.pos;
    let mut starts = Vec::with_capacity(n_streams);
    let mut at = payload_start;
    for (i, &l) in lens.iter().enumerate() {
        starts.push(at);
        at = at.checked_add(l).filter(|&e| e <= bytes.len()).ok_or(Error::Truncated {
            offset: lens_at + 4 * i,
            needed: l,
            available: bytes.len().saturating_sub(at),
        })?;
    }
    let end = at;
    let stream = |i: usize| &bytes[starts[i]..starts[i] + lens[i]];
    // Readers bounded to one stream but reporting absolute offsets.
    let reader = |i: usize| Reader::new(&bytes[..starts[i] + lens[i]], starts[i]);

    // metadata
    if lens[0] != METADATA_LEN && lens[0] != METADATA_LEN_WITH_MODEL {
        return Err(Error::Format {
            offset: lens_at,
            msg: format!(
                "metadata stream is {} bytes, expected {METADATA_LEN} or {METADATA_LEN_WITH_MODEL}",
                lens[0]
            ),
        });
    }
    let mut m = reader(0);
    let metadata = Metadata {
        depths: m.u32()?,
        shallow_d: m.u32()?,
        fp_inv_step: m.u32()?,
        fp_b: m.u32()?,
        fp_kmax: m.u32()?,
        model_id: if lens[0] == METADATA_LEN_WITH_MODEL {
            Some(m.u64()?)
        } else {
            None
        },
    };
    metadata.check().map_err(|_| Error::Format {
        offset: starts[0],
        msg: format!(
            "metadata needs 1 <= shallow_D <= depths, got shallow_D={} depths={}",
            metadata.shallow_d, metadata.depths
        ),
    })?;
    if metadata.stream_count() != n_streams as u64 {
        return Err(Error::Format {
            offset: 8,
            msg: format!(
                "{n_streams} streams, but depths={} shallow_D={} imply {}",
                metadata.depths,
                metadata.shallow_d,
                metadata.stream_count()
            ),
        });
    }

    // base
    let mut b = reader(1);
    let n0 = b.u32()? as usize;
    if lens[1] != 4 + 13 * n0 {
        return Err(Error::Format {
            offset: starts[1],
            msg: format!("base stream is {} bytes, n0={n0} implies {}", lens[1], 4 + 13 * n0),
        });
    }
    let mut coords = Vec::with_capacity(n0);
    for _ in 0..n0 {
        coords.push([b.i32()?, b.i32()?, b.i32()?]);
    }
    let occ = b.take(n0)?.to_vec();
    let base = BaseStream { coords, occ };

    let n_shallow = metadata.shallow_levels();
    let mut shallow = Vec::with_capacity(n_shallow);
    for l in 0..n_shallow {
        shallow.push(ShallowStreams {
            s0: stream(2 + 2 * l).to_vec(),
            s1: stream(3 + 2 * l).to_vec(),
        });
    }

    let first_deep = 2 + 2 * n_shallow;
    let mut deep = Vec::with_capacity(metadata.deep_levels());
    for i in first_deep..n_streams {
        let data = stream(i);
        let mut d = reader(i);
        let bad = |msg: String| Error::Format {
            offset: starts[i],
            msg,
        };
        let (nu, msplit, low_width) = (d.u32()?, d.u32()?, d.u32()?);
        let sub_lens = [d.u32()? as usize, d.u32()? as usize, d.u32()? as usize, d.u32()? as usize];
        let total = sub_lens
            .iter()
            .try_fold(DEEP_HEADER_LEN, |acc, &l| acc.checked_add(l));
        if total != Some(data.len()) {
            return Err(bad(format!(
                "deep substreams {sub_lens:?} do not fill the {}-byte stream",
                data.len()
            )));
        }
        let ef_high = d.take(sub_lens[0])?.to_vec();
        let ef_low = d.take(sub_lens[1])?.to_vec();
        let unary_k = d.take(sub_lens[2])?.to_vec();
        let nonunary_occ = d.take(sub_lens[3])?.to_vec();
        deep.push(DeepLevelStream {
            nu,
            msplit,
            low_width,
            ef_high,
            ef_low,
            unary_k,
            nonunary_occ,
        });
    }

    Ok((
        FramePacket {
            pos_q,
            n_points,
            metadata,
            base,
            shallow,
            deep,
        },
        end,
    ))
}

/// Splits a concatenation of packets into parsed frames.
pub fn parse_frames(bytes: &[u8]) -> Result<Vec<FramePacket>> {
    let mut out = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let (p, used) = parse_frame_prefix(&bytes[at..]).map_err(|e| shift_offset(e, at))?;
        out.push(p);
        at += used;
    }
    Ok(out)
}

fn shift_offset(e: Error, by: usize) -> Error {
    match e {
        Error::Format { offset, msg } => Error::Format {
            offset: offset + by,
            msg,
        },
        Error::Truncated {
            offset,
            needed,
            available,
        } => Error::Truncated {
            offset: offset + by,
            needed,
            available,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal() -> FramePacket {
        FramePacket {
            pos_q: 1,
            n_points: 1,
            metadata: Metadata::new(1, 1),
            base: BaseStream {
                coords: vec![[0, 0, 0]],
                occ: vec![1],
            },
            shallow: vec![],
            deep: vec![],
        }
    }

    fn bytes_of(n: usize) -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(any::<u8>(), 0..n)
    }

    fn packet() -> impl Strategy<Value = FramePacket> {
        (1u32..8, 0u32..8).prop_flat_map(|(shallow_d, extra)| {
            let depths = shallow_d + extra;
            let deep = prop::collection::vec(
                (
                    any::<u32>(),
                    any::<u32>(),
                    0u32..20,
                    bytes_of(12),
                    bytes_of(12),
                    bytes_of(12),
                    bytes_of(12),
                )
                    .prop_map(|(nu, msplit, low_width, a, b, c, d)| DeepLevelStream {
                        nu,
                        msplit,
                        low_width,
                        ef_high: a,
                        ef_low: b,
                        unary_k: c,
                        nonunary_occ: d,
                    }),
                extra as usize,
            );
            let shallow = prop::collection::vec(
                (bytes_of(20), bytes_of(20)).prop_map(|(s0, s1)| ShallowStreams { s0, s1 }),
                (shallow_d - 1) as usize,
            );
            let base = prop::collection::vec((prop::array::uniform3(any::<i32>()), any::<u8>()), 0..10)
                .prop_map(|v| BaseStream {
                    coords: v.iter().map(|x| x.0).collect(),
                    occ: v.iter().map(|x| x.1).collect(),
                });
            (any::<u32>(), any::<u32>(), any::<Option<u64>>(), base, shallow, deep).prop_map(
                move |(pos_q, n_points, model_id, base, shallow, deep)| FramePacket {
                    pos_q,
                    n_points,
                    metadata: Metadata {
                        model_id,
                        ..Metadata::new(depths, shallow_d)
                    },
                    base,
                    shallow,
                    deep,
                },
            )
        })
    }

    #[test]
    fn minimal_roundtrip() {
        let p = minimal();
        let bytes = serialize_frame(&p).unwrap();
        assert_eq!(&bytes[..8], b"LEAN3D\x00\x01");
        assert_eq!(bytes.len(), p.header_len() + p.stream_lengths().iter().sum::<usize>());
        assert_eq!(parse_frame(&bytes).unwrap(), p);
        assert_eq!(serialize_frame(&p).unwrap(), bytes);
    }

    #[test]
    fn inconsistent_packet_refused() {
        let mut p = minimal();
        p.metadata = Metadata::new(3, 1);
        assert!(matches!(serialize_frame(&p), Err(Error::Usage(_))));
        let mut p = minimal();
        p.base.occ.clear();
        assert!(serialize_frame(&p).is_err());
    }

    #[test]
    fn signature_and_trailing_bytes() {
        let mut bytes = serialize_frame(&minimal()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_frame(&bad), Err(Error::Format { offset: 0, .. })));
        bytes.push(0);
        assert!(matches!(parse_frame(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn multi_frame_concatenation() {
        let a = serialize_frame(&minimal()).unwrap();
        let mut p = minimal();
        p.pos_q = 8;
        let b = serialize_frame(&p).unwrap();
        let cat = [a.clone(), b.clone()].concat();
        let frames = parse_frames(&cat).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].pos_q, 8);
        assert!(parse_frames(&cat[..cat.len() - 1]).is_err());
    }

    #[test]
    fn length_field_mutations_are_caught() {
        let p = FramePacket {
            metadata: Metadata::new(3, 2),
            shallow: vec![ShallowStreams {
                s0: vec![1, 2, 3, 4, 5],
                s1: vec![6, 7, 8, 9],
            }],
            deep: vec![crate::deepcodec::encode_deep_level(&[1, 3, 8]).unwrap()],
            ..minimal()
        };
        let bytes = serialize_frame(&p).unwrap();
        for at in 8..p.header_len() {
            for flip in [1u8, 0x10, 0x80] {
                let mut m = bytes.clone();
                m[at] ^= flip;
                match parse_frame(&m) {
                    Err(Error::Format { .. }) | Err(Error::Truncated { .. }) => {}
                    // posQ and N are free-form fields.
                    Ok(q) => assert!((12..20).contains(&at), "byte {at} misparsed as {q:?}"),
                    Err(e) => panic!("unclassified error {e}"),
                }
            }
        }
    }

    proptest! {
        #[test]
        fn serialize_parse_identity(p in packet()) {
            let bytes = serialize_frame(&p).unwrap();
            let lens = p.stream_lengths();
            prop_assert_eq!(bytes.len() - p.header_len(), lens.iter().sum::<usize>());
            let q = parse_frame(&bytes).unwrap();
            prop_assert_eq!(&q, &p);
            prop_assert_eq!(serialize_frame(&q).unwrap(), bytes);
        }

        #[test]
        fn parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_frame(&bytes);
            let mut framed = TITLE.to_vec();
            framed.extend_from_slice(&bytes);
            let _ = parse_frame(&framed);
        }
    }
}
