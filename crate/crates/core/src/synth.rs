//! Seeded synthetic point clouds for tests, fitting and benchmarks.

use rand::Rng;

use crate::geometry::PointCloud;

/// Uniform points in `[-extent, extent)^3`; roughly `dup_fraction` of them
/// repeat an earlier point exactly.
pub fn uniform_cloud<R: Rng>(rng: &mut R, n: usize, extent: f64, dup_fraction: f64) -> PointCloud {
    let mut points: Vec<[f64; 3]> = Vec::with_capacity(n);
    for _ in 0..n {
        if !points.is_empty() && rng.gen_bool(dup_fraction) {
            let p = points[rng.gen_range(0..points.len())];
            points.push(p);
        } else {
            points.push(std::array::from_fn(|_| rng.gen_range(-extent..extent)));
        }
    }
    PointCloud::new(points)
}

/// A street-like scene: a ground plane, a few walls and compact clusters,
/// all within about `[-scale, scale]` horizontally.
pub fn structured_scene<R: Rng>(rng: &mut R, n: usize, scale: f64) -> PointCloud {
    let ground_z = -0.08 * scale;
    let walls: Vec<(f64, bool)> = (0..rng.gen_range(2..5))
        .map(|_| (rng.gen_range(-0.8..0.8) * scale, rng.gen_bool(0.5)))
        .collect();
    let clusters: Vec<([f64; 3], f64)> = (0..rng.gen_range(3..9))
        .map(|_| {
            let c = [
                rng.gen_range(-0.7..0.7) * scale,
                rng.gen_range(-0.7..0.7) * scale,
                ground_z + rng.gen_range(0.01..0.05) * scale,
            ];
            (c, rng.gen_range(0.005..0.02) * scale)
        })
        .collect();
    let wall_h = 0.15 * scale;

    let points = (0..n)
        .map(|_| {
            let u = rng.gen_range(-scale..scale);
            let v = rng.gen_range(-scale..scale);
            match rng.gen_range(0..10) {
                0..=4 => [u, v, ground_z + rng.gen_range(-0.002..0.002) * scale],
                5..=7 => {
                    let (at, along_x) = walls[rng.gen_range(0..walls.len())];
                    let h = ground_z + rng.gen_range(0.0..wall_h);
                    if along_x {
                        [u, at, h]
                    } else {
                        [at, v, h]
                    }
                }
                _ => {
                    let (c, r) = clusters[rng.gen_range(0..clusters.len())];
                    std::array::from_fn(|i| c[i] + rng.gen_range(-r..r))
                }
            }
        })
        .collect();
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_and_bounded() {
        let a = structured_scene(&mut ChaCha8Rng::seed_from_u64(1), 500, 100.0);
        let b = structured_scene(&mut ChaCha8Rng::seed_from_u64(1), 500, 100.0);
        assert_eq!(a, b);
        assert!(a.points.iter().flatten().all(|c| c.abs() <= 100.0));
        let u = uniform_cloud(&mut ChaCha8Rng::seed_from_u64(2), 1000, 10.0, 0.3);
        assert_eq!(u.len(), 1000);
        assert!(u.points.iter().flatten().all(|c| (-10.0..10.0).contains(c)));
        let mut sorted = u.points.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        sorted.dedup();
        assert!(sorted.len() < 900);
    }
}
