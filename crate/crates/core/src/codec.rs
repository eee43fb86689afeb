//! Frame encoder and decoder.
//!
//! Levels of the occupancy pyramid are split three ways: `O^(0)` ships raw
//! in the base stream, `O^(1)..O^(D_s-1)` are coded with the context model
//! and rANS (one `s0` and one `s1` stream per level), and `O^(D_s)..O^(L-1)`
//! go through the deterministic deep codec.

use std::time::{Duration, Instant};

use crate::bitstream::{
    parse_frame, serialize_frame, BaseStream, FramePacket, Metadata, ShallowStreams, FP_B,
    FP_INV_STEP, FP_KMAX,
};
use crate::deepcodec::{decode_deep_level, encode_deep_level};
use crate::entropy::{logits_to_cdf, rans_decode, rans_encode, IntegerCdf};
use crate::error::{Error, Result};
use crate::fnv::Fnv64;
use crate::geometry::{dequantize, quantize, PointCloud, QuantizedCloud, Reconstruction, Voxel};
use crate::hierarchy::{
    bce, bce_with_parents, build_pyramid, child_index, default_depth, select_split_depth,
    OccupancyPyramid, VoxelLevel, DEFAULT_SPLIT_THRESHOLD,
};
use crate::predictor::{join_nibbles, split_nibbles, NodeContext, OccupancyModel};

/// Deepest pyramid the codec accepts; context depth tags are a byte.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    /// Quantization step.
    pub pos_q: u32,
    pub split_threshold: f64,
    /// Fixed split depth D_s instead of the unary-fraction rule.
    pub split_override: Option<usize>,
    /// Fixed pyramid depth L instead of the smallest depth that fits.
    pub depth_override: Option<usize>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            pos_q: 1,
            split_threshold: DEFAULT_SPLIT_THRESHOLD,
            split_override: None,
            depth_override: None,
        }
    }
}

impl CodecConfig {
    pub fn with_pos_q(pos_q: u32) -> Self {
        Self {
            pos_q,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pos_q == 0 {
            return Err(Error::Parameter("posQ must be positive".into()));
        }
        if !(self.split_threshold > 0.0 && self.split_threshold < 1.0) {
            return Err(Error::Parameter(format!(
                "split threshold must lie in (0, 1), got {}",
                self.split_threshold
            )));
        }
        if let Some(l) = self.depth_override {
            if !(1..=MAX_DEPTH).contains(&l) {
                return Err(Error::Parameter(format!(
                    "depth override must be in 1..={MAX_DEPTH}, got {l}"
                )));
            }
        }
        if self.split_override == Some(0) {
            return Err(Error::Parameter("split override must be at least 1".into()));
        }
        Ok(())
    }
}

/// Wall time per pipeline stage. Both sides fill the same fields.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub quantize: Duration,
    /// Pyramid construction (encoder only).
    pub bpa: Duration,
    /// Child coordinate generation.
    pub bce: Duration,
    /// Context lookup and logit-to-CDF construction.
    pub shallow_predict: Duration,
    pub shallow_entropy: Duration,
    pub deep: Duration,
    pub serialize: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.quantize
            + self.bpa
            + self.bce
            + self.shallow_predict
            + self.shallow_entropy
            + self.deep
            + self.serialize
    }

    pub fn accumulate(&mut self, other: &StageTimings) {
        self.quantize += other.quantize;
        self.bpa += other.bpa;
        self.bce += other.bce;
        self.shallow_predict += other.shallow_predict;
        self.shallow_entropy += other.shallow_entropy;
        self.deep += other.deep;
        self.serialize += other.serialize;
    }
}

/// An encoded frame with the structural facts callers usually want.
#[derive(Debug, Clone)]
pub struct EncodedFrame {
    pub bytes: Vec<u8>,
    pub n_voxels: usize,
    pub depth: usize,
    pub split_depth: usize,
    /// Nodes coded by the learned path.
    pub shallow_nodes: usize,
    pub shallow_bytes: usize,
    pub deep_bytes: usize,
    /// FNV-1a digest over every CDF table used, in coding order.
    pub cdf_digest: u64,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct DecodedFrame {
    pub cloud: QuantizedCloud,
    pub depth: usize,
    pub split_depth: usize,
    pub cdf_digest: u64,
    pub timings: StageTimings,
}

impl DecodedFrame {
    pub fn points(&self, mode: Reconstruction) -> Result<PointCloud> {
        dequantize(&self.cloud.voxels, self.cloud.q, mode)
    }
}

#[derive(Debug, Clone, Copy)]
struct Digest(Fnv64);

impl Digest {
    fn new() -> Self {
        Digest(Fnv64::new())
    }

    fn add(&mut self, cdf: &IntegerCdf) {
        self.0.write(&cdf.to_le_bytes());
    }
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed();
    out
}

/// Contexts of the children of `parents`, in canonical order.
fn child_contexts(parents: &VoxelLevel, depth: usize) -> Result<(Vec<Voxel>, Vec<NodeContext>)> {
    let depth_tag = u8::try_from(depth)
        .map_err(|_| Error::Parameter(format!("level {depth} exceeds the context range")))?;
    let children = bce_with_parents(parents)?;
    let ctxs = children
        .iter()
        .map(|(v, pi)| NodeContext {
            depth: depth_tag,
            child_index: child_index(v),
            parent_occ: parents.occ[*pi as usize],
        })
        .collect();
    Ok((children.into_iter().map(|(v, _)| v).collect(), ctxs))
}

/// Chooses D_s for a pyramid, clamped to `1..=L`.
pub fn resolve_split_depth(pyramid: &OccupancyPyramid, cfg: &CodecConfig) -> usize {
    let l = pyramid.depth();
    cfg.split_override
        .unwrap_or_else(|| select_split_depth(pyramid, cfg.split_threshold))
        .clamp(1, l)
}

pub fn encode_frame<M: OccupancyModel + ?Sized>(
    cloud: &PointCloud,
    cfg: &CodecConfig,
    model: &M,
) -> Result<Vec<u8>> {
    Ok(encode_frame_report(cloud, cfg, model)?.bytes)
}

pub fn encode_frame_report<M: OccupancyModel + ?Sized>(
    cloud: &PointCloud,
    cfg: &CodecConfig,
    model: &M,
) -> Result<EncodedFrame> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::Usage("cannot encode an empty point cloud".into()));
    }
    let mut t = StageTimings::default();
    let q = timed(&mut t.quantize, || quantize(cloud, cfg.pos_q as f64))?;
    encode_inner(&q.voxels, cfg, model, t)
}

/// Encodes voxels that are already on the lattice. They are canonicalized
/// first, so any order and duplicates are accepted.
pub fn encode_voxels<M: OccupancyModel + ?Sized>(
    voxels: &[Voxel],
    cfg: &CodecConfig,
    model: &M,
) -> Result<EncodedFrame> {
    cfg.validate()?;
    if voxels.is_empty() {
        return Err(Error::Usage("cannot encode an empty voxel set".into()));
    }
    let q = QuantizedCloud::from_voxels(voxels.to_vec(), cfg.pos_q as f64)?;
    encode_inner(&q.voxels, cfg, model, StageTimings::default())
}

fn encode_inner<M: OccupancyModel + ?Sized>(
    leaves: &[Voxel],
    cfg: &CodecConfig,
    model: &M,
    mut t: StageTimings,
) -> Result<EncodedFrame> {
    let n_points = u32::try_from(leaves.len())
        .map_err(|_| Error::Usage(format!("{} voxels exceed the u32 count", leaves.len())))?;
    let depth = cfg.depth_override.unwrap_or_else(|| default_depth(leaves));
    if depth > MAX_DEPTH {
        return Err(Error::Parameter(format!(
            "pyramid depth {depth} exceeds {MAX_DEPTH}"
        )));
    }
    let pyramid = timed(&mut t.bpa, || build_pyramid(leaves, depth))?;
    let split = resolve_split_depth(&pyramid, cfg);

    let mut digest = Digest::new();
    let mut shallow = Vec::with_capacity(split - 1);
    let mut shallow_nodes = 0;
    for d in 1..split {
        let (coords, ctxs) = timed(&mut t.bce, || child_contexts(&pyramid.levels[d - 1], d))?;
        let level = &pyramid.levels[d];
        if coords != level.coords {
            return Err(Error::Invariant(format!(
                "child expansion disagrees with the pyramid at level {d}"
            )));
        }
        let (s0, s1): (Vec<u8>, Vec<u8>) = level.occ.iter().map(|&o| split_nibbles(o)).unzip();
        let (c0, c1) = timed(&mut t.shallow_predict, || {
            let c0: Vec<IntegerCdf> = ctxs
                .iter()
                .map(|c| logits_to_cdf(&model.predict_s0(c)))
                .collect();
            let c1: Vec<IntegerCdf> = ctxs
                .iter()
                .zip(&s0)
                .map(|(c, &a)| logits_to_cdf(&model.predict_s1(c, a)))
                .collect();
            (c0, c1)
        });
        c0.iter().chain(&c1).for_each(|c| digest.add(c));
        let streams = timed(&mut t.shallow_entropy, || -> Result<ShallowStreams> {
            Ok(ShallowStreams {
                s0: rans_encode(&s0, &c0)?,
                s1: rans_encode(&s1, &c1)?,
            })
        })?;
        shallow_nodes += level.len();
        shallow.push(streams);
    }

    let deep = timed(&mut t.deep, || {
        pyramid.levels[split..]
            .iter()
            .map(|l| encode_deep_level(&l.occ))
            .collect::<Result<Vec<_>>>()
    })?;

    let packet = FramePacket {
        pos_q: cfg.pos_q,
        n_points,
        metadata: Metadata::new(depth as u32, split as u32).with_model_id(model.fingerprint()),
        base: BaseStream {
            coords: pyramid.levels[0].coords.clone(),
            occ: pyramid.levels[0].occ.clone(),
        },
        shallow,
        deep,
    };
    let bytes = timed(&mut t.serialize, || serialize_frame(&packet))?;
    Ok(EncodedFrame {
        bytes,
        n_voxels: leaves.len(),
        depth,
        split_depth: split,
        shallow_nodes,
        shallow_bytes: packet.shallow_bytes(),
        deep_bytes: packet.deep_bytes(),
        cdf_digest: digest.0.finish(),
        timings: t,
    })
}

pub fn decode_frame<M: OccupancyModel + ?Sized>(bytes: &[u8], model: &M) -> Result<DecodedFrame> {
    let mut t = StageTimings::default();
    let packet = timed(&mut t.serialize, || parse_frame(bytes))?;
    decode_packet(&packet, model, t)
}

/// Decodes an already parsed packet.
pub fn decode_packet<M: OccupancyModel + ?Sized>(
    packet: &FramePacket,
    model: &M,
    mut t: StageTimings,
) -> Result<DecodedFrame> {
    let meta = &packet.metadata;
    if (meta.fp_inv_step, meta.fp_b, meta.fp_kmax) != (FP_INV_STEP, FP_B, FP_KMAX) {
        return Err(Error::Format {
            offset: 0,
            msg: format!(
                "unsupported fixed-point parameters ({}, {}, {})",
                meta.fp_inv_step, meta.fp_b, meta.fp_kmax
            ),
        });
    }
    if packet.pos_q == 0 {
        return Err(Error::Format {
            offset: 0,
            msg: "posQ is zero".into(),
        });
    }
    if let Some(id) = meta.model_id {
        let ours = model.fingerprint();
        if id != ours {
            return Err(Error::Integrity(format!(
                "packet was coded with model {id:016x}, decoder holds {ours:016x}"
            )));
        }
    }
    let depth = meta.depths as usize;
    let split = meta.shallow_d as usize;
    if depth > MAX_DEPTH {
        return Err(Error::Format {
            offset: 0,
            msg: format!("pyramid depth {depth} exceeds {MAX_DEPTH}"),
        });
    }

    let mut level = VoxelLevel::new(packet.base.coords.clone(), packet.base.occ.clone())
        .map_err(|e| e.into_integrity("base stream"))?;
    let mut digest = Digest::new();

    for (i, streams) in packet.shallow.iter().enumerate() {
        let d = i + 1;
        let stage = format!("shallow level {d}");
        let (coords, ctxs) = timed(&mut t.bce, || child_contexts(&level, d))
            .map_err(|e| e.into_integrity(&stage))?;
        let n = ctxs.len();

        let mut c0 = Vec::with_capacity(n);
        let s0 = timed(&mut t.shallow_entropy, || {
            rans_decode(&streams.s0, n, |j, _| {
                let start = Instant::now();
                let c = logits_to_cdf(&model.predict_s0(&ctxs[j]));
                t.shallow_predict += start.elapsed();
                c0.push(c);
                c
            })
        })
        .map_err(|e| e.into_integrity(&format!("{stage} s0")))?;
        let mut c1 = Vec::with_capacity(n);
        let s1 = timed(&mut t.shallow_entropy, || {
            rans_decode(&streams.s1, n, |j, _| {
                let start = Instant::now();
                let c = logits_to_cdf(&model.predict_s1(&ctxs[j], s0[j]));
                t.shallow_predict += start.elapsed();
                c1.push(c);
                c
            })
        })
        .map_err(|e| e.into_integrity(&format!("{stage} s1")))?;
        c0.iter().chain(&c1).for_each(|c| digest.add(c));

        let occ = s0.iter().zip(&s1).map(|(&a, &b)| join_nibbles(a, b)).collect();
        level = VoxelLevel::new(coords, occ).map_err(|e| e.into_integrity(&stage))?;
    }

    for (i, stream) in packet.deep.iter().enumerate() {
        let d = split + i;
        let stage = format!("deep level {d}");
        let coords = timed(&mut t.bce, || bce(&level)).map_err(|e| e.into_integrity(&stage))?;
        if stream.nu as usize != coords.len() {
            return Err(Error::Integrity(format!(
                "{stage}: stream codes {} nodes but the level has {}",
                stream.nu,
                coords.len()
            )));
        }
        let occ = timed(&mut t.deep, || decode_deep_level(stream))
            .map_err(|e| e.into_integrity(&stage))?;
        level = VoxelLevel::new(coords, occ).map_err(|e| e.into_integrity(&stage))?;
    }

    // Model lookups ran inside the rANS decode loop; report them separately.
    t.shallow_entropy = t.shallow_entropy.saturating_sub(t.shallow_predict);

    let leaves = timed(&mut t.bce, || bce(&level)).map_err(|e| e.into_integrity("leaves"))?;
    if leaves.len() != packet.n_points as usize {
        return Err(Error::Integrity(format!(
            "decoded {} voxels, header promises {}",
            leaves.len(),
            packet.n_points
        )));
    }
    Ok(DecodedFrame {
        cloud: QuantizedCloud {
            voxels: leaves,
            q: packet.pos_q as f64,
        },
        depth,
        split_depth: split,
        cdf_digest: digest.0.finish(),
        timings: t,
    })
}
