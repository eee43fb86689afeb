//! Integer CDFs from quantized logits.
//!
//! Only the rank order of the logits matters: the top-ranked symbol gets
//! 60000 of the 65536 mass units, the last-ranked gets 370 and every other
//! symbol 369. Everything after logit quantization is integer arithmetic, so
//! any two machines holding the same `z~` build identical tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALPHABET: usize = 16;
pub const PROB_BITS: u32 = 16;
pub const TOTAL_MASS: u32 = 1 << PROB_BITS;
/// Fixed-point scale applied to real logits before rounding.
pub const LOGIT_SCALE: i32 = 128;
/// Weight of the logit in the ranking score `lambda * z~_r - r`.
pub const RANK_WEIGHT: i32 = 1000;

/// Count assigned to the symbol at each rank position.
pub const TEMPLATE_COUNTS: [u32; ALPHABET] = [
    60000, 369, 369, 369, 369, 369, 369, 369, 369, 369, 369, 369, 369, 369, 369, 370,
];

/// Sixteen logits already in the integer `z~` domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct QuantizedLogits(pub [i16; ALPHABET]);

impl QuantizedLogits {
    pub const ZERO: QuantizedLogits = QuantizedLogits([0; ALPHABET]);
}

/// Quantizes real logits with `floor(128 z + 0.5)`, saturating to the `i16` range.
pub fn quantize_logits(z: &[f64; ALPHABET]) -> Result<QuantizedLogits> {
    let mut out = [0i16; ALPHABET];
    for (r, &v) in z.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Input(format!("logit {r} is not finite ({v})")));
        }
        let q = (LOGIT_SCALE as f64 * v + 0.5).floor();
        out[r] = q.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
    }
    Ok(QuantizedLogits(out))
}

/// A 17-entry cumulative table with `cdf[0] = 0` and `cdf[16] = 65536`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntegerCdf {
    cdf: [u32; ALPHABET + 1],
}

impl IntegerCdf {
    /// Accepts any strictly increasing table spanning exactly `0..=65536`.
    pub fn from_table(cdf: [u32; ALPHABET + 1]) -> Result<Self> {
        if cdf[0] != 0 || cdf[ALPHABET] != TOTAL_MASS {
            return Err(Error::Input(format!(
                "cdf must span 0..={TOTAL_MASS}, got {}..={}",
                cdf[0], cdf[ALPHABET]
            )));
        }
        if cdf.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("cdf must be strictly increasing".into()));
        }
        Ok(Self { cdf })
    }

    pub fn table(&self) -> &[u32; ALPHABET + 1] {
        &self.cdf
    }

    #[inline]
    pub fn start(&self, symbol: usize) -> u32 {
        self.cdf[symbol]
    }

    #[inline]
    pub fn count(&self, symbol: usize) -> u32 {
        self.cdf[symbol + 1] - self.cdf[symbol]
    }

    pub fn counts(&self) -> [u32; ALPHABET] {
        std::array::from_fn(|r| self.count(r))
    }

    /// Symbol whose interval contains `slot` (`slot < 65536`).
    #[inline]
    pub fn symbol_at(&self, slot: u32) -> usize {
        let mut s = 0;
        while self.cdf[s + 1] <= slot {
            s += 1;
        }
        s
    }

    pub fn probability(&self, symbol: usize) -> f64 {
        self.count(symbol) as f64 / TOTAL_MASS as f64
    }

    /// Serialized as 17 little-endian `u32`s.
    pub fn to_le_bytes(&self) -> [u8; 4 * (ALPHABET + 1)] {
        let mut out = [0u8; 4 * (ALPHABET + 1)];
        for (chunk, v) in out.chunks_exact_mut(4).zip(&self.cdf) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Symbols ordered by descending score `1000 * z~_r - r`.
///
/// With `|z~| < 2^15` the scores stay below `2^25` in magnitude and are
/// pairwise distinct, so no secondary sort key is needed.
pub fn rank_order(z: &QuantizedLogits) -> [usize; ALPHABET] {
    let score = |r: usize| RANK_WEIGHT * z.0[r] as i32 - r as i32;
    let mut order: [usize; ALPHABET] = std::array::from_fn(|r| r);
    order.sort_unstable_by_key(|&r| std::cmp::Reverse(score(r)));
    order
}

pub fn logits_to_cdf(z: &QuantizedLogits) -> IntegerCdf {
    let order = rank_order(z);
    let mut counts = [0u32; ALPHABET];
    for (rank, &symbol) in order.iter().enumerate() {
        counts[symbol] = TEMPLATE_COUNTS[rank];
    }
    let mut cdf = [0u32; ALPHABET + 1];
    for r in 0..ALPHABET {
        cdf[r + 1] = cdf[r] + counts[r];
    }
    IntegerCdf { cdf }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with(entries: &[(usize, i16)]) -> QuantizedLogits {
        let mut z = [0i16; ALPHABET];
        for &(r, v) in entries {
            z[r] = v;
        }
        QuantizedLogits(z)
    }

    #[test]
    fn template_sums_to_total() {
        assert_eq!(TEMPLATE_COUNTS.iter().sum::<u32>(), TOTAL_MASS);
    }

    #[test]
    fn quantizer_examples() {
        assert_eq!(quantize_logits(&[0.0; 16]).unwrap(), QuantizedLogits::ZERO);
        let mut z = [0.0; 16];
        z[5] = 1.0;
        assert_eq!(quantize_logits(&z).unwrap(), with(&[(5, 128)]));
        let mut z = [0.0; 16];
        z[0] = -0.01;
        assert_eq!(quantize_logits(&z).unwrap().0[0], -1);
        z[0] = -0.003;
        assert_eq!(quantize_logits(&z).unwrap().0[0], 0);
        z[0] = -0.008;
        assert_eq!(quantize_logits(&z).unwrap().0[0], -1);
        z[0] = 1e9;
        assert_eq!(quantize_logits(&z).unwrap().0[0], i16::MAX);
        z[0] = f64::NAN;
        assert!(matches!(quantize_logits(&z), Err(Error::Input(_))));
    }

    #[test]
    fn all_zero_template() {
        let cdf = logits_to_cdf(&QuantizedLogits::ZERO);
        let expected_counts = TEMPLATE_COUNTS;
        assert_eq!(cdf.counts(), expected_counts);
        let t = cdf.table();
        assert_eq!(t[0], 0);
        assert_eq!(t[1], 60000);
        assert_eq!(t[2], 60369);
        assert_eq!(t[3], 60738);
        assert_eq!(t[15], 65166);
        assert_eq!(t[16], 65536);
    }

    #[test]
    fn single_peak() {
        let z = with(&[(5, 128)]);
        assert_eq!(rank_order(&z), [5, 0, 1, 2, 3, 4, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]);
        let n = logits_to_cdf(&z).counts();
        assert_eq!(n[5], 60000);
        assert_eq!(n[15], 370);
        for r in (0..5).chain(6..15) {
            assert_eq!(n[r], 369);
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        let z = with(&[(3, 7), (9, 7)]);
        let order = rank_order(&z);
        assert_eq!(&order[..2], &[3, 9]);
        assert_eq!(logits_to_cdf(&z).count(3), 60000);
    }

    #[test]
    fn extreme_logits_do_not_collide() {
        let z = QuantizedLogits([i16::MIN, i16::MAX, -1, 0, 1, i16::MIN + 1, i16::MAX - 1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        let order = rank_order(&z);
        assert_eq!(order[0], 1);
        assert_eq!(order[15], 0);
    }

    #[test]
    fn symbol_lookup_covers_every_slot_boundary() {
        let cdf = logits_to_cdf(&with(&[(9, 50)]));
        for s in 0..ALPHABET {
            assert_eq!(cdf.symbol_at(cdf.start(s)), s);
            assert_eq!(cdf.symbol_at(cdf.start(s + 1) - 1), s);
        }
    }

    #[test]
    fn from_table_validation() {
        let good = *logits_to_cdf(&QuantizedLogits::ZERO).table();
        assert!(IntegerCdf::from_table(good).is_ok());
        let mut bad = good;
        bad[16] = 65535;
        assert!(IntegerCdf::from_table(bad).is_err());
        let mut flat = good;
        flat[2] = flat[1];
        assert!(IntegerCdf::from_table(flat).is_err());
    }

    proptest! {
        #[test]
        fn counts_are_always_the_template_multiset(z in prop::array::uniform16(any::<i16>())) {
            let cdf = logits_to_cdf(&QuantizedLogits(z));
            let mut n = cdf.counts();
            n.sort_unstable();
            let mut t = TEMPLATE_COUNTS;
            t.sort_unstable();
            prop_assert_eq!(n, t);
            prop_assert_eq!(cdf.table()[16], TOTAL_MASS);
            // Argmax (lowest index on ties) always owns the dominant count.
            let max = *z.iter().max().unwrap();
            let top = z.iter().position(|&v| v == max).unwrap();
            prop_assert_eq!(cdf.count(top), 60000);
        }

        #[test]
        fn permutation_consistent(
            z in prop::collection::hash_set(any::<i16>(), 16),
            perm in Just((0..16usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let z: Vec<i16> = z.into_iter().collect();
            let base = QuantizedLogits(z.clone().try_into().unwrap());
            // permuted[perm[r]] = z[r]
            let mut permuted = [0i16; 16];
            for r in 0..16 {
                permuted[perm[r]] = z[r];
            }
            let a = logits_to_cdf(&base).counts();
            let b = logits_to_cdf(&QuantizedLogits(permuted)).counts();
            for r in 0..16 {
                prop_assert_eq!(a[r], b[perm[r]]);
            }
        }
    }
}
