//! Dyadic sparse occupancy pyramid.
//!
//! Levels are built bottom-up with bitwise parent aggregation (children map to
//! `floor(u / 2)` and set bit `k(u)` in the parent's 8-bit code) and walked
//! top-down with bitwise child expansion (`2v + delta_k` for every set bit).
//! Both use floor division and non-negative modulo, so negative coordinates
//! need no offset.

use crate::error::{Error, Result};
use crate::geometry::{canonical_key, packed_key, unpack_key, Voxel};

/// Unit offsets of the eight child slots; slot `k` is `(k & 1, k >> 1 & 1, k >> 2 & 1)`.
pub const CHILD_OFFSETS: [Voxel; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

#[inline]
pub fn parent_of(u: &Voxel) -> Voxel {
    [u[0] >> 1, u[1] >> 1, u[2] >> 1]
}

/// Within-parent slot of `u`: `(ux mod 2) + 2 (uy mod 2) + 4 (uz mod 2)`.
#[inline]
pub fn child_index(u: &Voxel) -> u8 {
    ((u[0] & 1) | ((u[1] & 1) << 1) | ((u[2] & 1) << 2)) as u8
}

/// One hierarchy level: canonical-order coordinates and their occupancy codes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VoxelLevel {
    pub coords: Vec<Voxel>,
    pub occ: Vec<u8>,
}

impl VoxelLevel {
    /// Checks every level invariant and wraps the data.
    pub fn new(coords: Vec<Voxel>, occ: Vec<u8>) -> Result<Self> {
        let level = Self { coords, occ };
        level.validate()?;
        Ok(level)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.len() != self.occ.len() {
            return Err(Error::Invariant(format!(
                "{} coordinates but {} occupancy codes",
                self.coords.len(),
                self.occ.len()
            )));
        }
        if let Some(i) = self.occ.iter().position(|&o| o == 0) {
            return Err(Error::Invariant(format!("occupancy code 0 at node {i}")));
        }
        if let Some(i) = self
            .coords
            .windows(2)
            .position(|w| canonical_key(&w[0]) >= canonical_key(&w[1]))
        {
            return Err(Error::Invariant(format!(
                "coordinates not strictly canonical at node {}",
                i + 1
            )));
        }
        Ok(())
    }

    /// Number of children this level expands to.
    pub fn child_count(&self) -> usize {
        self.occ.iter().map(|o| o.count_ones() as usize).sum()
    }
}

/// Bitwise parent aggregation over a set of child coordinates.
pub fn bpa(children: &[Voxel]) -> Result<VoxelLevel> {
    if children.is_empty() {
        return Err(Error::Usage("bpa needs at least one child".into()));
    }
    let sorted = children
        .windows(2)
        .all(|w| canonical_key(&w[0]) <= canonical_key(&w[1]));
    Ok(if sorted {
        bpa_sorted(children)
    } else {
        bpa_any(children)
    })
}

fn bpa_any(children: &[Voxel]) -> VoxelLevel {
    let mut keys: Vec<u128> = children
        .iter()
        .map(|u| packed_key(&parent_of(u)) | child_index(u) as u128)
        .collect();
    keys.sort_unstable();

    let mut coords = Vec::with_capacity(keys.len());
    let mut occ: Vec<u8> = Vec::with_capacity(keys.len());
    let mut last = None;
    for k in keys {
        let bit = 1u8 << (k & 7);
        let parent = k >> 32;
        if last == Some(parent) {
            *occ.last_mut().unwrap() |= bit;
        } else {
            last = Some(parent);
            coords.push(unpack_key(k));
            occ.push(bit);
        }
    }
    VoxelLevel { coords, occ }
}

/// Canonical input: each parent plane is a contiguous even-z run followed by
/// an odd-z run, and each parent row takes one contiguous slice from both.
/// Only the (short) rows need sorting.
fn bpa_sorted(children: &[Voxel]) -> VoxelLevel {
    let n = children.len();
    let mut coords = Vec::with_capacity(n);
    let mut occ: Vec<u8> = Vec::with_capacity(n);
    let mut row: Vec<i64> = Vec::new();
    let mut i = 0;
    while i < n {
        let pz = children[i][2] >> 1;
        let j = run_end(children, i, |c| c[2] >> 1 == pz);
        let mid = run_end(children, i, |c| c[2] == 2 * pz).min(j);
        let (mut a, mut b) = (i, mid);
        while a < mid || b < j {
            let py = match (a < mid, b < j) {
                (true, true) => (children[a][1] >> 1).min(children[b][1] >> 1),
                (true, false) => children[a][1] >> 1,
                _ => children[b][1] >> 1,
            };
            row.clear();
            for (at, end) in [(&mut a, mid), (&mut b, j)] {
                while *at < end && children[*at][1] >> 1 == py {
                    let c = &children[*at];
                    row.push((((c[0] >> 1) as i64) << 3) | child_index(c) as i64);
                    *at += 1;
                }
            }
            row.sort_unstable();
            let mut last = None;
            for &k in &row {
                let px = (k >> 3) as i32;
                let bit = 1u8 << (k & 7);
                if last == Some(px) {
                    *occ.last_mut().unwrap() |= bit;
                } else {
                    last = Some(px);
                    coords.push([px, py, pz]);
                    occ.push(bit);
                }
            }
        }
        i = j;
    }
    VoxelLevel { coords, occ }
}

/// Bitwise child expansion: the canonical-order children of `level`, each
/// paired with the index of its parent inside `level`.
///
/// Children are emitted directly in canonical order: per parent plane, per
/// child z, per parent row, per child y, parents left to right.
pub fn bce_with_parents(level: &VoxelLevel) -> Result<Vec<(Voxel, u32)>> {
    let mut out = Vec::with_capacity(level.child_count());
    expand(level, |c, pi| out.push((c, pi)))?;
    Ok(out)
}

/// Bitwise child expansion of a level into its canonical-order child set.
pub fn bce(level: &VoxelLevel) -> Result<Vec<Voxel>> {
    let mut out = Vec::with_capacity(level.child_count());
    expand(level, |c, _| out.push(c))?;
    Ok(out)
}

/// First index at or after `from` where `same` stops holding.
#[inline]
fn run_end(v: &[Voxel], from: usize, same: impl Fn(&Voxel) -> bool) -> usize {
    from + v[from..].iter().take_while(|c| same(c)).count()
}

fn expand(level: &VoxelLevel, mut emit: impl FnMut(Voxel, u32)) -> Result<()> {
    let (coords, occ) = (&level.coords, &level.occ);
    if coords.len() != occ.len() {
        return Err(Error::Invariant("coords/occ length mismatch".into()));
    }
    if let Some(i) = occ.iter().position(|&o| o == 0) {
        return Err(Error::Invariant(format!("occupancy code 0 at node {i}")));
    }
    if let Some(i) = coords
        .iter()
        .position(|v| v.iter().any(|c| c.checked_mul(2).is_none()))
    {
        return Err(Error::Invariant(format!(
            "child of node {i} leaves the 32-bit lattice"
        )));
    }
    if let Some(i) = coords
        .windows(2)
        .position(|w| canonical_key(&w[0]) >= canonical_key(&w[1]))
    {
        return Err(Error::Invariant(format!(
            "coordinates not strictly canonical at node {}",
            i + 1
        )));
    }

    let n = coords.len();
    let mut p0 = 0;
    while p0 < n {
        let pz = coords[p0][2];
        let p1 = run_end(&coords[..], p0, |v| v[2] == pz);
        for dz in 0..2 {
            let mut r0 = p0;
            while r0 < p1 {
                let py = coords[r0][1];
                let r1 = run_end(&coords[..p1], r0, |v| v[1] == py);
                for dy in 0..2 {
                    for pi in r0..r1 {
                        let (v, o) = (coords[pi], occ[pi]);
                        for dx in 0..2 {
                            if o >> (dx | dy << 1 | dz << 2) & 1 == 1 {
                                // 2v is even, so adding 0/1 cannot overflow.
                                emit([2 * v[0] + dx, 2 * v[1] + dy, 2 * v[2] + dz], pi as u32);
                            }
                        }
                    }
                }
                r0 = r1;
            }
        }
        p0 = p1;
    }
    Ok(())
}

/// Levels `0..L`, coarse to fine. The leaf set is `bce(levels[L - 1])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyPyramid {
    pub levels: Vec<VoxelLevel>,
}

impl OccupancyPyramid {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Expands the whole pyramid from level 0 and returns the leaves.
    pub fn leaves(&self) -> Result<Vec<Voxel>> {
        let last = self
            .levels
            .last()
            .ok_or_else(|| Error::Usage("empty pyramid".into()))?;
        bce(last)
    }

    pub fn unary_fractions(&self) -> Vec<f64> {
        self.levels
            .iter()
            .map(|l| unary_fraction(l).unwrap_or(0.0))
            .collect()
    }
}

/// Bits needed so that `c >> bits` lands in `{-1, 0}`.
fn signed_bit_length(c: i32) -> u32 {
    let m = if c < 0 { !c } else { c };
    32 - m.leading_zeros()
}

/// Default pyramid depth: enough levels that the coarsest coordinates are all
/// in `{-1, 0}^3`, i.e. at most eight root nodes. Never less than 1.
pub fn default_depth(leaves: &[Voxel]) -> usize {
    leaves
        .iter()
        .flat_map(|v| v.iter().map(|&c| signed_bit_length(c)))
        .max()
        .unwrap_or(0)
        .max(1) as usize
}

pub fn build_pyramid(leaves: &[Voxel], depth: usize) -> Result<OccupancyPyramid> {
    if depth < 1 {
        return Err(Error::Parameter("pyramid depth must be at least 1".into()));
    }
    if leaves.is_empty() {
        return Err(Error::Usage("cannot build a pyramid over no leaves".into()));
    }
    let mut levels = Vec::with_capacity(depth);
    let mut current = bpa(leaves)?;
    for _ in 1..depth {
        let parent = bpa(&current.coords)?;
        levels.push(current);
        current = parent;
    }
    levels.push(current);
    levels.reverse();
    Ok(OccupancyPyramid { levels })
}

/// Fraction of nodes whose occupancy code has exactly one bit set.
pub fn unary_fraction(level: &VoxelLevel) -> Result<f64> {
    if level.occ.is_empty() {
        return Err(Error::Usage("unary fraction of an empty level".into()));
    }
    let unary = level.occ.iter().filter(|o| o.count_ones() == 1).count();
    Ok(unary as f64 / level.occ.len() as f64)
}

/// First index whose fraction strictly exceeds `threshold`, or `fractions.len()`.
pub fn split_depth_from_fractions(fractions: &[f64], threshold: f64) -> usize {
    fractions
        .iter()
        .position(|&f| f > threshold)
        .unwrap_or(fractions.len())
}

/// Split depth D_s: the first level whose unary fraction exceeds `threshold`
/// (0.6 by default), or L when none does.
pub fn select_split_depth(pyramid: &OccupancyPyramid, threshold: f64) -> usize {
    split_depth_from_fractions(&pyramid.unary_fractions(), threshold)
}

pub const DEFAULT_SPLIT_THRESHOLD: f64 = 0.6;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::canonicalize;
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    /// Slot-enumeration oracle: for each parent, test all eight child slots
    /// against membership in the child set.
    fn bpa_oracle(children: &[Voxel]) -> BTreeMap<(i32, i32, i32), u8> {
        let set: BTreeSet<Voxel> = children.iter().copied().collect();
        let mut out = BTreeMap::new();
        for u in children {
            let p = [
                u[0].div_euclid(2),
                u[1].div_euclid(2),
                u[2].div_euclid(2),
            ];
            let mut code = 0u8;
            for k in 0..8 {
                let c = [
                    2 * p[0] + (k & 1),
                    2 * p[1] + ((k >> 1) & 1),
                    2 * p[2] + ((k >> 2) & 1),
                ];
                if set.contains(&c) {
                    code |= 1 << k;
                }
            }
            out.insert(canonical_key(&p), code);
        }
        out
    }

    #[test]
    fn bpa_examples() {
        let l = bpa(&[[0, 0, 0]]).unwrap();
        assert_eq!((l.coords, l.occ), (vec![[0, 0, 0]], vec![1]));
        let l = bpa(&[[0, 0, 0], [1, 0, 0]]).unwrap();
        assert_eq!((l.coords, l.occ), (vec![[0, 0, 0]], vec![3]));
        let l = bpa(&[[-1, -1, -1]]).unwrap();
        assert_eq!((l.coords, l.occ), (vec![[-1, -1, -1]], vec![128]));
        assert!(matches!(bpa(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn bce_examples() {
        let l = VoxelLevel::new(vec![[0, 0, 0]], vec![1]).unwrap();
        assert_eq!(bce(&l).unwrap(), vec![[0, 0, 0]]);
        let l = VoxelLevel::new(vec![[0, 0, 0]], vec![3]).unwrap();
        assert_eq!(bce(&l).unwrap(), vec![[0, 0, 0], [1, 0, 0]]);
        let l = VoxelLevel::new(vec![[-1, -1, -1]], vec![128]).unwrap();
        assert_eq!(bce(&l).unwrap(), vec![[-1, -1, -1]]);
        let bad = VoxelLevel {
            coords: vec![[0, 0, 0]],
            occ: vec![0],
        };
        assert!(matches!(bce(&bad), Err(Error::Invariant(_))));
        assert!(VoxelLevel::new(vec![[0, 0, 0]], vec![0]).is_err());
        assert!(VoxelLevel::new(vec![[1, 0, 0], [0, 0, 0]], vec![1, 1]).is_err());
    }

    #[test]
    fn bce_rejects_non_canonical_levels() {
        let level = VoxelLevel {
            coords: vec![[1, 0, 0], [0, 0, 0]],
            occ: vec![1, 1],
        };
        assert!(matches!(bce(&level), Err(Error::Invariant(_))));
    }

    #[test]
    fn bce_rejects_lattice_overflow() {
        let l = VoxelLevel::new(vec![[i32::MAX, 0, 0]], vec![1]).unwrap();
        assert!(matches!(bce(&l), Err(Error::Invariant(_))));
    }

    #[test]
    fn pyramid_examples() {
        let p = build_pyramid(&[[0, 0, 0]], 3).unwrap();
        assert_eq!(p.depth(), 3);
        for l in &p.levels {
            assert_eq!((l.coords.clone(), l.occ.clone()), (vec![[0, 0, 0]], vec![1]));
        }

        let p = build_pyramid(&[[0, 0, 0], [7, 7, 7]], 3).unwrap();
        assert_eq!(p.levels[2].coords, vec![[0, 0, 0], [3, 3, 3]]);
        assert_eq!(p.levels[2].occ, vec![1, 128]);
        assert_eq!(p.levels[1].coords, vec![[0, 0, 0], [1, 1, 1]]);
        assert_eq!(p.levels[1].occ, vec![1, 128]);
        assert_eq!(p.levels[0].coords, vec![[0, 0, 0]]);
        assert_eq!(p.levels[0].occ, vec![129]);

        assert!(matches!(
            build_pyramid(&[[0, 0, 0]], 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn default_depth_reaches_unit_root() {
        assert_eq!(default_depth(&[[0, 0, 0]]), 1);
        assert_eq!(default_depth(&[[0, 0, 0], [7, 7, 7]]), 3);
        assert_eq!(default_depth(&[[-1, 0, 0]]), 1);
        assert_eq!(default_depth(&[[-32768, 32767, 0]]), 15);
        assert_eq!(default_depth(&[[-32769, 0, 0]]), 16);
    }

    #[test]
    fn unary_fraction_examples() {
        let lvl = |occ: Vec<u8>| VoxelLevel {
            coords: (0..occ.len() as i32).map(|i| [i, 0, 0]).collect(),
            occ,
        };
        assert_eq!(unary_fraction(&lvl(vec![1, 2, 4, 8])).unwrap(), 1.0);
        assert_eq!(unary_fraction(&lvl(vec![3, 255])).unwrap(), 0.0);
        assert!((unary_fraction(&lvl(vec![1, 3, 4, 7, 16])).unwrap() - 0.6).abs() < 1e-12);
        assert!(unary_fraction(&lvl(vec![])).is_err());
    }

    #[test]
    fn split_depth_examples() {
        assert_eq!(split_depth_from_fractions(&[0.1, 0.4, 0.7, 0.9], 0.6), 2);
        assert_eq!(split_depth_from_fractions(&[0.0, 0.0, 0.0], 0.6), 3);
        assert_eq!(split_depth_from_fractions(&[0.61], 0.6), 0);
        // Strict exceedance: exactly 0.6 does not qualify.
        assert_eq!(split_depth_from_fractions(&[0.6, 0.61], 0.6), 1);
    }

    fn voxel_set() -> impl Strategy<Value = Vec<Voxel>> {
        prop_oneof![
            prop::collection::vec(prop::array::uniform3(-300i32..300), 1..300),
            prop::collection::vec(prop::array::uniform3(-4i32..4), 1..400),
        ]
        .prop_map(|mut v| {
            canonicalize(&mut v);
            v
        })
    }

    proptest! {
        #[test]
        fn bpa_matches_oracle_and_bce_inverts(set in voxel_set()) {
            let level = bpa(&set).unwrap();
            level.validate().unwrap();
            let oracle = bpa_oracle(&set);
            prop_assert_eq!(level.len(), oracle.len());
            for (c, o) in level.coords.iter().zip(&level.occ) {
                prop_assert_eq!(oracle[&canonical_key(c)], *o);
            }
            prop_assert!(level.len() <= set.len());
            prop_assert_eq!(level.child_count(), set.len());
            prop_assert_eq!(bce(&level).unwrap(), set);
        }

        #[test]
        fn bpa_ignores_input_order(
            mut raw in prop::collection::vec(prop::array::uniform3(-6i32..6), 1..200),
        ) {
            let shuffled = bpa(&raw).unwrap();
            canonicalize(&mut raw);
            prop_assert_eq!(shuffled, bpa(&raw).unwrap());
        }

        #[test]
        fn pyramid_chain_reproduces_leaves(set in voxel_set()) {
            let depth = default_depth(&set);
            let p = build_pyramid(&set, depth).unwrap();
            prop_assert_eq!(p.depth(), depth);
            prop_assert!(p.levels[0].len() <= 8);
            let mut coords = p.levels[0].coords.clone();
            for d in 0..depth {
                prop_assert_eq!(&coords, &p.levels[d].coords);
                coords = bce(&p.levels[d]).unwrap();
            }
            prop_assert_eq!(coords, set);
        }

        #[test]
        fn split_depth_monotone_in_threshold(
            fr in prop::collection::vec(0.0f64..1.0, 1..12),
            a in 0.01f64..0.99,
            b in 0.01f64..0.99,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(split_depth_from_fractions(&fr, lo) <= split_depth_from_fractions(&fr, hi));
        }
    }
}
