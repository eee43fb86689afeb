//! Conformance vectors for the integer CDF and the rANS byte format.
//!
//! Two independent implementations agree on the entropy path exactly when
//! they reproduce every table and byte stream in these files.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::cdf::{logits_to_cdf, IntegerCdf, QuantizedLogits, ALPHABET};
use crate::entropy::rans::{rans_decode_with, rans_encode};
use crate::error::{Error, Result};

pub const CDF_VECTOR_FILE: &str = "cdf_vectors.json";
pub const RANS_VECTOR_FILE: &str = "rans_vectors.json";
const DEFAULT_SEED: u64 = 0x4c33_4456;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdfVector {
    pub logits: [i16; ALPHABET],
    pub cdf: [u32; ALPHABET + 1],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RansVector {
    pub logits: Vec<[i16; ALPHABET]>,
    pub symbols: Vec<u8>,
    pub bytes: Vec<u8>,
}

fn cdf_vector(z: [i16; ALPHABET]) -> CdfVector {
    CdfVector {
        logits: z,
        cdf: *logits_to_cdf(&QuantizedLogits(z)).table(),
    }
}

/// Hand-picked edge cases first, then seeded random logits.
pub fn generate_cdf_vectors(random: usize) -> Vec<CdfVector> {
    let mut zs: Vec<[i16; ALPHABET]> = vec![[0; ALPHABET]];
    let mut peak = [0i16; ALPHABET];
    peak[5] = 128;
    zs.push(peak);
    let mut tie = [0i16; ALPHABET];
    tie[3] = 7;
    tie[9] = 7;
    zs.push(tie);
    zs.push([i16::MIN; ALPHABET]);
    zs.push([i16::MAX; ALPHABET]);
    zs.push(std::array::from_fn(|r| r as i16));
    zs.push(std::array::from_fn(|r| -(r as i16)));
    zs.push(std::array::from_fn(|r| if r % 2 == 0 { i16::MAX } else { i16::MIN }));
    let mut last = [0i16; ALPHABET];
    last[15] = 1;
    zs.push(last);

    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    for i in 0..random {
        let z: [i16; ALPHABET] = match i % 3 {
            0 => std::array::from_fn(|_| rng.gen()),
            1 => std::array::from_fn(|_| rng.gen_range(-512..512)),
            // Few distinct values, so ties are common.
            _ => std::array::from_fn(|_| rng.gen_range(-2..3)),
        };
        zs.push(z);
    }
    zs.into_iter().map(cdf_vector).collect()
}

pub fn generate_rans_vectors(count: usize) -> Result<Vec<RansVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED ^ 0xa5a5);
    let mut out = Vec::with_capacity(count + 1);
    out.push(RansVector {
        logits: vec![],
        symbols: vec![],
        bytes: rans_encode(&[], &[])?,
    });
    for i in 0..count {
        let n = rng.gen_range(1..=64 * (i % 4 + 1));
        let logits: Vec<[i16; ALPHABET]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-64..64)))
            .collect();
        let cdfs: Vec<IntegerCdf> = logits
            .iter()
            .map(|z| logits_to_cdf(&QuantizedLogits(*z)))
            .collect();
        // Mostly the predicted symbol, sometimes a surprise.
        let symbols: Vec<u8> = cdfs
            .iter()
            .map(|c| {
                if rng.gen_bool(0.8) {
                    (0..ALPHABET).find(|&s| c.count(s) == 60000).unwrap() as u8
                } else {
                    rng.gen_range(0..ALPHABET as u8)
                }
            })
            .collect();
        let bytes = rans_encode(&symbols, &cdfs)?;
        out.push(RansVector {
            logits,
            symbols,
            bytes,
        });
    }
    Ok(out)
}

/// Writes both vector files into `dir`.
pub fn write_vectors(dir: &Path, cdf_random: usize, rans_count: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cdf = generate_cdf_vectors(cdf_random);
    let rans = generate_rans_vectors(rans_count)?;
    fs::write(dir.join(CDF_VECTOR_FILE), to_json(&cdf)?)?;
    fs::write(dir.join(RANS_VECTOR_FILE), to_json(&rans)?)?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Input(e.to_string()))
}

pub fn load_cdf_vectors(path: &Path) -> Result<Vec<CdfVector>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        msg: format!("{}: {e}", path.display()),
    })
}

pub fn load_rans_vectors(path: &Path) -> Result<Vec<RansVector>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        msg: format!("{}: {e}", path.display()),
    })
}

/// Rebuilds every CDF and compares it byte for byte against the record.
pub fn check_cdf_vectors(vectors: &[CdfVector]) -> Result<()> {
    for (i, v) in vectors.iter().enumerate() {
        let rebuilt = logits_to_cdf(&QuantizedLogits(v.logits));
        let expected = IntegerCdf::from_table(v.cdf)?;
        if rebuilt.to_le_bytes() != expected.to_le_bytes() {
            return Err(Error::Integrity(format!(
                "cdf vector {i}: rebuilt {:?} != recorded {:?}",
                rebuilt.table(),
                v.cdf
            )));
        }
    }
    Ok(())
}

/// Re-encodes and decodes every triple against its recorded bytes.
pub fn check_rans_vectors(vectors: &[RansVector]) -> Result<()> {
    for (i, v) in vectors.iter().enumerate() {
        let cdfs: Vec<IntegerCdf> = v
            .logits
            .iter()
            .map(|z| logits_to_cdf(&QuantizedLogits(*z)))
            .collect();
        let bytes = rans_encode(&v.symbols, &cdfs)?;
        if bytes != v.bytes {
            return Err(Error::Integrity(format!("rans vector {i}: encoded bytes differ")));
        }
        let symbols = rans_decode_with(&v.bytes, &cdfs)?;
        if symbols != v.symbols {
            return Err(Error::Integrity(format!("rans vector {i}: decoded symbols differ")));
        }
    }
    Ok(())
}
