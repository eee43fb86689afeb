//! Occupancy prediction for shallow levels.
//!
//! Each 8-bit occupancy code is split into a low nibble `s0` and a high
//! nibble `s1` (`occ = 16 * s1 + s0`). A model returns 16 integer logits for
//! `s0` given the node context, then 16 logits for `s1` given the context
//! and the already known `s0`.
//!
//! [`LogitTableModel`] keys its tables on `(depth, child index within the
//! parent, parent occupancy code)`, all of which the decoder knows before it
//! decodes the node. Logits are stored already quantized, so the model file
//! fully determines every CDF on every platform.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::entropy::cdf::{logits_to_cdf, rank_order, IntegerCdf, QuantizedLogits, ALPHABET};
use crate::error::{Error, Result};
use crate::fnv::Fnv64;
use crate::geometry::canonical_key;
use crate::hierarchy::{child_index, parent_of, OccupancyPyramid};

/// What the model sees for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeContext {
    /// Level of the node being coded.
    pub depth: u8,
    /// Slot `k` of the node inside its parent.
    pub child_index: u8,
    /// Occupancy code of the parent; bit `child_index` is always set.
    pub parent_occ: u8,
}

impl NodeContext {
    pub fn is_valid(&self) -> bool {
        self.child_index < 8 && (self.parent_occ >> self.child_index) & 1 == 1
    }
}

#[inline]
pub fn split_nibbles(occ: u8) -> (u8, u8) {
    (occ & 0x0F, occ >> 4)
}

#[inline]
pub fn join_nibbles(s0: u8, s1: u8) -> u8 {
    (s1 << 4) | s0
}

/// Anything that can rank the 16 values of each nibble.
pub trait OccupancyModel {
    fn predict_s0(&self, ctx: &NodeContext) -> QuantizedLogits;
    fn predict_s1(&self, ctx: &NodeContext, s0: u8) -> QuantizedLogits;
    /// Identifies the model in packets so a decoder holding a different one
    /// fails loudly. Models that must decode each other's packets need equal
    /// fingerprints.
    fn fingerprint(&self) -> u64;
}

/// Context-table model with all-zero fallback logits for unseen contexts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogitTableModel {
    s0: BTreeMap<NodeContext, QuantizedLogits>,
    s1: BTreeMap<(NodeContext, u8), QuantizedLogits>,
}

impl OccupancyModel for LogitTableModel {
    fn predict_s0(&self, ctx: &NodeContext) -> QuantizedLogits {
        self.s0.get(ctx).copied().unwrap_or(QuantizedLogits::ZERO)
    }

    fn predict_s1(&self, ctx: &NodeContext, s0: u8) -> QuantizedLogits {
        self.s1
            .get(&(*ctx, s0))
            .copied()
            .unwrap_or(QuantizedLogits::ZERO)
    }

    /// FNV-1a over the canonical model file bytes.
    fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        self.write_bytes(|b| h.write(b));
        h.finish()
    }
}

impl LogitTableModel {
    /// The empty model: every prediction is the fallback.
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.s0.len() + self.s1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s0.is_empty() && self.s1.is_empty()
    }

    pub fn set_s0(&mut self, ctx: NodeContext, logits: QuantizedLogits) {
        self.s0.insert(ctx, logits);
    }

    pub fn set_s1(&mut self, ctx: NodeContext, s0: u8, logits: QuantizedLogits) {
        self.s1.insert((ctx, s0), logits);
    }

    /// Applies `f` to every stored logit vector.
    pub fn map_logits(&mut self, mut f: impl FnMut(&mut QuantizedLogits)) {
        self.s0.values_mut().for_each(&mut f);
        self.s1.values_mut().for_each(&mut f);
    }
}

// Model file: "L3DM", u32 version, u32 record count, then records sorted by
// (table, depth, child, parent_occ, s0), each followed by 16 i16 logits.
// Little-endian throughout.
const MODEL_MAGIC: &[u8; 4] = b"L3DM";
const MODEL_VERSION: u32 = 1;
const MODEL_HEADER: usize = 12;
const MODEL_RECORD: usize = 5 + 2 * ALPHABET;

impl LogitTableModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MODEL_HEADER + self.len() * MODEL_RECORD);
        self.write_bytes(|b| out.extend_from_slice(b));
        out
    }

    fn write_bytes(&self, mut sink: impl FnMut(&[u8])) {
        sink(MODEL_MAGIC);
        sink(&MODEL_VERSION.to_le_bytes());
        sink(&(self.len() as u32).to_le_bytes());
        let mut record = |tag: u8, ctx: &NodeContext, s0: u8, z: &QuantizedLogits| {
            let mut r = [0u8; MODEL_RECORD];
            r[..5].copy_from_slice(&[tag, ctx.depth, ctx.child_index, ctx.parent_occ, s0]);
            for (i, v) in z.0.iter().enumerate() {
                r[5 + 2 * i..7 + 2 * i].copy_from_slice(&v.to_le_bytes());
            }
            sink(&r);
        };
        for (ctx, z) in &self.s0 {
            record(0, ctx, 0, z);
        }
        for ((ctx, s0), z) in &self.s1 {
            record(1, ctx, *s0, z);
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, msg: String| Error::Format { offset, msg };
        if bytes.len() < MODEL_HEADER {
            return Err(Error::Truncated {
                offset: 0,
                needed: MODEL_HEADER,
                available: bytes.len(),
            });
        }
        if &bytes[..4] != MODEL_MAGIC {
            return Err(fmt(0, "not a model file (bad magic)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != MODEL_VERSION {
            return Err(fmt(4, format!("unsupported model version {version}")));
        }
        let count = u32_at(8) as usize;
        let expected = count
            .checked_mul(MODEL_RECORD)
            .and_then(|n| n.checked_add(MODEL_HEADER))
            .ok_or_else(|| fmt(8, format!("record count {count} overflows")))?;
        if bytes.len() != expected {
            return Err(fmt(
                8,
                format!("{count} records need {expected} bytes, file has {}", bytes.len()),
            ));
        }

        let mut model = Self::default();
        let mut prev: Option<[u8; 5]> = None;
        for (i, rec) in bytes[MODEL_HEADER..].chunks_exact(MODEL_RECORD).enumerate() {
            let at = MODEL_HEADER + i * MODEL_RECORD;
            let key: [u8; 5] = rec[..5].try_into().unwrap();
            if prev.is_some_and(|p| p >= key) {
                return Err(fmt(at, "records not in strictly ascending key order".into()));
            }
            prev = Some(key);
            let [tag, depth, child, parent_occ, s0] = key;
            let ctx = NodeContext {
                depth,
                child_index: child,
                parent_occ,
            };
            if !ctx.is_valid() {
                return Err(fmt(at, format!("invalid context {ctx:?}")));
            }
            let z = QuantizedLogits(std::array::from_fn(|r| {
                i16::from_le_bytes([rec[5 + 2 * r], rec[6 + 2 * r]])
            }));
            match (tag, s0) {
                (0, 0) => {
                    model.s0.insert(ctx, z);
                }
                (1, s0) if (s0 as usize) < ALPHABET => {
                    model.s1.insert((ctx, s0), z);
                }
                _ => return Err(fmt(at, format!("bad record tag {tag} / s0 {s0}"))),
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Contexts of every node of level `depth` (`depth >= 1`), in canonical order.
pub fn level_contexts(pyramid: &OccupancyPyramid, depth: usize) -> Result<Vec<NodeContext>> {
    if depth == 0 || depth >= pyramid.depth() {
        return Err(Error::Usage(format!(
            "no parent context for level {depth} of a depth-{} pyramid",
            pyramid.depth()
        )));
    }
    let depth_tag = u8::try_from(depth)
        .map_err(|_| Error::Parameter(format!("level {depth} exceeds the model's depth range")))?;
    let parents = &pyramid.levels[depth - 1];
    pyramid.levels[depth]
        .coords
        .iter()
        .map(|v| {
            let p = parent_of(v);
            let pi = parents
                .coords
                .binary_search_by_key(&canonical_key(&p), canonical_key)
                .map_err(|_| Error::Invariant(format!("node {v:?} has no parent")))?;
            Ok(NodeContext {
                depth: depth_tag,
                child_index: child_index(v),
                parent_occ: parents.occ[pi],
            })
        })
        .collect()
}

/// Levels coded by the learned path for split depth `split`: `1..split`.
pub fn shallow_levels(pyramid: &OccupancyPyramid, split: usize) -> std::ops::Range<usize> {
    1..split.min(pyramid.depth()).max(1)
}

/// Every shallow-coded node as `(context, occupancy)`.
pub fn shallow_nodes(pyramid: &OccupancyPyramid, split: usize) -> Result<Vec<(NodeContext, u8)>> {
    let mut out = Vec::new();
    for d in shallow_levels(pyramid, split) {
        let ctxs = level_contexts(pyramid, d)?;
        out.extend(ctxs.into_iter().zip(pyramid.levels[d].occ.iter().copied()));
    }
    Ok(out)
}

/// Raw sub-symbol counts gathered during fitting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextCounts {
    pub s0: BTreeMap<NodeContext, [u64; ALPHABET]>,
    pub s1: BTreeMap<(NodeContext, u8), [u64; ALPHABET]>,
}

pub fn count_contexts(corpus: &[(OccupancyPyramid, usize)]) -> Result<ContextCounts> {
    let mut counts = ContextCounts::default();
    for (pyramid, split) in corpus {
        for (ctx, occ) in shallow_nodes(pyramid, *split)? {
            let (s0, s1) = split_nibbles(occ);
            counts.s0.entry(ctx).or_default()[s0 as usize] += 1;
            counts.s1.entry((ctx, s0)).or_default()[s1 as usize] += 1;
        }
    }
    Ok(counts)
}

/// `round(128 * ln((count + 1) / (total + 16)))`, with the most frequent
/// symbol (lowest index on count ties) forced to rank first.
pub fn counts_to_logits(counts: &[u64; ALPHABET]) -> QuantizedLogits {
    let total: u64 = counts.iter().sum();
    let denom = (total + ALPHABET as u64) as f64;
    let mut z = QuantizedLogits(std::array::from_fn(|r| {
        let v = (128.0 * ((counts[r] + 1) as f64 / denom).ln()).round();
        v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }));
    // Rounding can merge nearby counts; keep the ranking faithful at the top.
    let top = (0..ALPHABET)
        .max_by_key(|&r| (counts[r], std::cmp::Reverse(r)))
        .unwrap();
    if rank_order(&z)[0] != top {
        let best_other = (0..ALPHABET)
            .filter(|&r| r != top)
            .map(|r| z.0[r])
            .max()
            .unwrap();
        z.0[top] = best_other.saturating_add(1);
    }
    z
}

/// Fits a table model from pyramids and their split depths.
pub fn fit_table(corpus: &[(OccupancyPyramid, usize)]) -> Result<LogitTableModel> {
    if corpus.is_empty() {
        return Err(Error::Usage("fitting needs at least one pyramid".into()));
    }
    let counts = count_contexts(corpus)?;
    Ok(LogitTableModel {
        s0: counts
            .s0
            .iter()
            .map(|(k, c)| (*k, counts_to_logits(c)))
            .collect(),
        s1: counts
            .s1
            .iter()
            .map(|(k, c)| (*k, counts_to_logits(c)))
            .collect(),
    })
}

/// Ideal code length, in bits, of the shallow levels under `model`, using
/// the same integer CDFs the coder uses.
pub fn rate_bits<M: OccupancyModel + ?Sized>(
    model: &M,
    pyramid: &OccupancyPyramid,
    split: usize,
) -> Result<f64> {
    let mut bits = 0.0;
    for (ctx, occ) in shallow_nodes(pyramid, split)? {
        let (s0, s1) = split_nibbles(occ);
        let c0 = logits_to_cdf(&model.predict_s0(&ctx));
        let c1 = logits_to_cdf(&model.predict_s1(&ctx, s0));
        bits -= c0.probability(s0 as usize).log2() + c1.probability(s1 as usize).log2();
    }
    Ok(bits)
}

/// `KL(q || p)` in bits between two CDF-materialized distributions.
pub fn kl_divergence_bits(q: &IntegerCdf, p: &IntegerCdf) -> f64 {
    (0..ALPHABET)
        .map(|r| {
            let (qr, pr) = (q.probability(r), p.probability(r));
            qr * (qr / pr).ln()
        })
        .sum::<f64>()
        / std::f64::consts::LN_2
}

/// Summed nibble KL divergence from `reference` (q) to `candidate` (p) over
/// the shallow nodes, with `s1` conditioned on the true `s0`.
pub fn kl_bits<A, B>(
    reference: &A,
    candidate: &B,
    pyramid: &OccupancyPyramid,
    split: usize,
) -> Result<f64>
where
    A: OccupancyModel + ?Sized,
    B: OccupancyModel + ?Sized,
{
    let mut bits = 0.0;
    for (ctx, occ) in shallow_nodes(pyramid, split)? {
        let (s0, _) = split_nibbles(occ);
        bits += kl_divergence_bits(
            &logits_to_cdf(&reference.predict_s0(&ctx)),
            &logits_to_cdf(&candidate.predict_s0(&ctx)),
        );
        bits += kl_divergence_bits(
            &logits_to_cdf(&reference.predict_s1(&ctx, s0)),
            &logits_to_cdf(&candidate.predict_s1(&ctx, s0)),
        );
    }
    Ok(bits)
}
