//! Raw points, lattice quantization and point-file I/O.
//!
//! The codec is lossless on the integer lattice produced by [`quantize`]:
//! every voxel is `floor(p / q)` per axis, duplicates collapse, and the
//! resulting set is kept in canonical `(z, y, x)` order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Integer lattice coordinate, stored as `[x, y, z]`.
pub type Voxel = [i32; 3];

/// Sort key for the canonical node order: lexicographic by z, then y, then x.
#[inline]
pub fn canonical_key(v: &Voxel) -> (i32, i32, i32) {
    (v[2], v[1], v[0])
}

/// Order-preserving 96-bit image of [`canonical_key`], placed in the high
/// bits so callers can pack up to 32 bits of payload below it.
#[inline]
pub fn packed_key(v: &Voxel) -> u128 {
    let b = |c: i32| (c as u32 ^ 0x8000_0000) as u128;
    (b(v[2]) << 96) | (b(v[1]) << 64) | (b(v[0]) << 32)
}

/// Inverse of [`packed_key`], ignoring the payload bits.
#[inline]
pub fn unpack_key(k: u128) -> Voxel {
    let c = |shift: u32| ((k >> shift) as u32 ^ 0x8000_0000) as i32;
    [c(32), c(64), c(96)]
}

/// Sorts and deduplicates voxels into canonical order.
pub fn canonicalize(voxels: &mut Vec<Voxel>) {
    voxels.sort_unstable_by_key(packed_key);
    voxels.dedup();
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A deduplicated voxel set together with the step that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCloud {
    /// Unique voxels in canonical order.
    pub voxels: Vec<Voxel>,
    pub q: f64,
}

impl QuantizedCloud {
    /// Builds a quantized cloud from arbitrary voxels, canonicalizing them.
    pub fn from_voxels(mut voxels: Vec<Voxel>, q: f64) -> Result<Self> {
        check_step(q)?;
        canonicalize(&mut voxels);
        Ok(Self { voxels, q })
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

/// Where a voxel is placed when mapped back to real coordinates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Reconstruction {
    /// `x * q`; makes quantize(dequantize(V)) an exact identity.
    #[default]
    Corner,
    /// `(x + 0.5) * q`.
    Center,
}

fn check_step(q: f64) -> Result<()> {
    if q.is_finite() && q > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "quantization step must be positive and finite, got {q}"
        )))
    }
}

/// Uniform quantization `x = floor(p / q)` followed by deduplication.
pub fn quantize(cloud: &PointCloud, q: f64) -> Result<QuantizedCloud> {
    check_step(q)?;
    let mut voxels = Vec::with_capacity(cloud.points.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let mut v = [0i32; 3];
        for axis in 0..3 {
            let c = p[axis];
            if !c.is_finite() {
                return Err(Error::Input(format!(
                    "point {i} has non-finite coordinate {c}"
                )));
            }
            let f = (c / q).floor();
            if f < i32::MIN as f64 || f > i32::MAX as f64 {
                return Err(Error::Input(format!(
                    "point {i} quantizes outside the 32-bit lattice ({f})"
                )));
            }
            v[axis] = f as i32;
        }
        voxels.push(v);
    }
    canonicalize(&mut voxels);
    Ok(QuantizedCloud { voxels, q })
}

pub fn dequantize(voxels: &[Voxel], q: f64, mode: Reconstruction) -> Result<PointCloud> {
    check_step(q)?;
    let offset = match mode {
        Reconstruction::Corner => 0.0,
        Reconstruction::Center => 0.5,
    };
    let points = voxels
        .iter()
        .map(|v| {
            [
                (v[0] as f64 + offset) * q,
                (v[1] as f64 + offset) * q,
                (v[2] as f64 + offset) * q,
            ]
        })
        .collect();
    Ok(PointCloud { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    /// Packed little-endian `f32 x, y, z, intensity` records.
    KittiBin,
    /// ASCII PLY with a `vertex` element carrying `x`, `y`, `z`.
    PlyAscii,
}

impl PointFormat {
    /// Picks the format from a file extension (`.bin` or `.ply`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "bin" => Some(PointFormat::KittiBin),
            "ply" => Some(PointFormat::PlyAscii),
            _ => None,
        }
    }
}

pub fn load_points(path: &Path, format: PointFormat) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    match format {
        PointFormat::KittiBin => parse_kitti_bin(&bytes),
        PointFormat::PlyAscii => parse_ply_ascii(&bytes),
    }
}

const KITTI_RECORD: usize = 16;

pub fn parse_kitti_bin(bytes: &[u8]) -> Result<PointCloud> {
    let whole = bytes.len() / KITTI_RECORD * KITTI_RECORD;
    if whole != bytes.len() {
        return Err(Error::Format {
            offset: whole,
            msg: format!(
                "partial kitti record: {} trailing bytes",
                bytes.len() - whole
            ),
        });
    }
    let points = bytes
        .chunks_exact(KITTI_RECORD)
        .map(|rec| {
            let f = |i: usize| f32::from_le_bytes(rec[i..i + 4].try_into().unwrap()) as f64;
            [f(0), f(4), f(8)]
        })
        .collect();
    Ok(PointCloud { points })
}

pub fn write_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD);
    for p in &cloud.points {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        out.extend_from_slice(&0f32.to_le_bytes());
    }
    out
}

pub fn parse_ply_ascii(bytes: &[u8]) -> Result<PointCloud> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format {
        offset: e.valid_up_to(),
        msg: "ply file is not valid utf-8".into(),
    })?;

    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
    }

    let mut lines = LineCursor { text, pos: 0 };
    match lines.next_line() {
        (Some(l), _) if l.trim() == "ply" => {}
        (_, at) => {
            return Err(Error::Format {
                offset: at,
                msg: "missing 'ply' magic line".into(),
            })
        }
    }

    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (line, at) = lines.next_line();
        let Some(line) = line else {
            return Err(Error::Format {
                offset: at,
                msg: "header ended without end_header".into(),
            });
        };
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(Error::Format {
                        offset: at,
                        msg: format!("unsupported ply format '{fmt}'"),
                    });
                }
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| Error::Format {
                    offset: at,
                    msg: format!("bad element count '{count}'"),
                })?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", .., name] => match elements.last_mut() {
                Some(el) => el.props.push(name.to_string()),
                None => {
                    return Err(Error::Format {
                        offset: at,
                        msg: "property before any element".into(),
                    })
                }
            },
            [] | ["comment", ..] | ["obj_info", ..] => {}
            _ => {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("unrecognized header line '{line}'"),
                })
            }
        }
    }

    let Some(vi) = elements.iter().position(|e| e.name == "vertex") else {
        return Err(Error::Format {
            offset: lines.pos,
            msg: "no vertex element".into(),
        });
    };
    let vertex = &elements[vi];
    let offset = lines.pos;
    let col = |axis: &str| {
        vertex
            .props
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| Error::Format {
                offset,
                msg: format!("vertex element lacks property '{axis}'"),
            })
    };
    let cols = [col("x")?, col("y")?, col("z")?];

    // Skip data lines of elements declared before the vertex element.
    let skip: usize = elements[..vi].iter().map(|e| e.count).sum();
    for _ in 0..skip {
        if let (None, at) = lines.next_line() {
            return Err(Error::Format {
                offset: at,
                msg: "ply body shorter than declared".into(),
            });
        }
    }

    let mut points = Vec::with_capacity(vertex.count);
    for _ in 0..vertex.count {
        let (line, at) = lines.next_line();
        let Some(line) = line else {
            return Err(Error::Format {
                offset: at,
                msg: "ply body shorter than declared vertex count".into(),
            });
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < vertex.props.len() {
            return Err(Error::Format {
                offset: at,
                msg: format!(
                    "vertex line has {} fields, expected {}",
                    fields.len(),
                    vertex.props.len()
                ),
            });
        }
        let mut p = [0f64; 3];
        for (axis, &c) in cols.iter().enumerate() {
            p[axis] = fields[c].parse().map_err(|_| Error::Format {
                offset: at,
                msg: format!("bad coordinate '{}'", fields[c]),
            })?;
        }
        points.push(p);
    }
    Ok(PointCloud { points })
}

/// Line iterator that remembers the byte offset of each line.
struct LineCursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> LineCursor<'a> {
    fn next_line(&mut self) -> (Option<&'a str>, usize) {
        let at = self.pos;
        let rest = &self.text[self.pos..];
        if rest.is_empty() {
            return (None, at);
        }
        let len = rest.find('\n').map_or(rest.len(), |i| i + 1);
        self.pos += len;
        (Some(rest[..len].trim_end_matches(['\n', '\r'])), at)
    }
}

pub fn write_ply_ascii(cloud: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    out
}

pub fn save_points(path: &Path, cloud: &PointCloud, format: PointFormat) -> Result<()> {
    match format {
        PointFormat::KittiBin => fs::write(path, write_kitti_bin(cloud))?,
        PointFormat::PlyAscii => fs::write(path, write_ply_ascii(cloud))?,
    }
    Ok(())
}
