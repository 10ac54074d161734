//! Query geometry and radius search against brute-force oracles.

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use visocc_core::geometry::{augmentation_transform, PointCloud};
use visocc_core::queries::{generate_queries, subsample_queries, OffsetMode, QueryKind};
use visocc_core::spatial::{SearchMode, SpatialIndex};
use visocc_core::Vec3;

fn random_vec<R: Rng>(rng: &mut R, half: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

/// Brute-force pair scan; the metric is written out independently of `SearchMode`.
fn brute_pairs(supports: &[Vec3], queries: &[Vec3], r: f64, bev: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        for (si, s) in supports.iter().enumerate() {
            let (dx, dy, dz) = (q.x - s.x, q.y - s.y, if bev { 0.0 } else { q.z - s.z });
            if (dx * dx + dy * dy + dz * dz).sqrt() <= r {
                out.push((qi, si));
            }
        }
    }
    out
}

#[test]
fn queries_are_collinear_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let delta = 0.1;
    for mode in [OffsetMode::Uniform, OffsetMode::Fixed] {
        let mut checked = 0;
        while checked < 10_000 {
            let c = random_vec(&mut rng, 10.0);
            let p = c + random_vec(&mut rng, 30.0);
            let range = p.distance(c);
            if range <= delta {
                continue;
            }
            let cloud = PointCloud::new(c, vec![p], Some(vec![0.5]), None).unwrap();
            let qs = generate_queries(&cloud, delta, mode, rng.random()).queries;
            assert_eq!(qs.len(), 3);
            for k in 0..3 {
                let q = qs.positions[k];
                assert!(
                    (q - c).cross(p - c).norm() <= 1e-9 * range.max(1.0),
                    "not collinear"
                );
                let t = (q - c).dot(p - c) / (range * range);
                match qs.kind[k] {
                    QueryKind::Front | QueryKind::Sight => {
                        assert!(t > 0.0 && t < 1.0, "t = {t}");
                        assert!(!qs.occupancy[k]);
                    }
                    QueryKind::Behind => {
                        assert!(t > 1.0 && t <= 1.0 + delta / range + 1e-12, "t = {t}");
                        assert!(qs.occupancy[k]);
                    }
                }
            }
            checked += 1;
        }
    }
}

#[test]
fn subsampling_preserves_kind_proportions() {
    let pts: Vec<Vec3> = (0..1000)
        .map(|i| Vec3::new(3.0 + (i % 40) as f64 * 0.2, (i / 40) as f64 * 0.2, 0.0))
        .collect();
    let cloud = PointCloud::new(Vec3::new(0.0, 0.0, 1.5), pts, None, None).unwrap();
    let all = generate_queries(&cloud, 0.1, OffsetMode::Uniform, 2).queries;
    let (n, m) = (all.len() as f64, 2000.0);
    // Hypergeometric: K = 1000 of each kind out of N = 3000, draw m.
    let k = 1000.0;
    let mean = m * k / n;
    let sd = (m * (k / n) * (1.0 - k / n) * (n - m) / (n - 1.0)).sqrt();
    for trial in 0..100 {
        let sub = subsample_queries(&all, 2000, trial);
        assert_eq!(sub.len(), 2000);
        for kind in [QueryKind::Front, QueryKind::Behind, QueryKind::Sight] {
            let count = sub.kind.iter().filter(|&&x| x == kind).count() as f64;
            assert!(
                (count - mean).abs() <= 3.0 * sd + 1.0,
                "trial {trial}: {kind:?} count {count}, mean {mean}, sd {sd}"
            );
        }
    }
}

#[test]
fn index_holds_every_point_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<Vec3> = (0..1000).map(|_| random_vec(&mut rng, 10.0)).collect();
    for mode in [SearchMode::Ball3d, SearchMode::CylinderBev] {
        let idx = SpatialIndex::build(&pts, 1.0, mode);
        let mut seen: Vec<usize> = idx.buckets().flat_map(|(_, b)| b.iter().copied()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..1000).collect::<Vec<_>>());
        for (key, bucket) in idx.buckets() {
            for &i in bucket {
                assert_eq!(idx.cell_of(pts[i]), *key);
            }
        }
    }
}

#[test]
fn radius_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let supports: Vec<Vec3> = (0..200).map(|_| random_vec(&mut rng, 10.0)).collect();
    let queries: Vec<Vec3> = (0..600).map(|_| random_vec(&mut rng, 10.0)).collect();
    for (mode, bev) in [(SearchMode::Ball3d, false), (SearchMode::CylinderBev, true)] {
        let idx = SpatialIndex::build(&supports, 1.0, mode);
        assert_eq!(
            idx.radius_pairs(&queries, 1.0),
            brute_pairs(&supports, &queries, 1.0, bev)
        );
    }
}

#[test]
fn build_order_does_not_change_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let supports: Vec<Vec3> = (0..100).map(|_| random_vec(&mut rng, 5.0)).collect();
    let queries: Vec<Vec3> = (0..100).map(|_| random_vec(&mut rng, 5.0)).collect();
    let reversed: Vec<Vec3> = supports.iter().rev().copied().collect();
    let a = SpatialIndex::build(&supports, 1.0, SearchMode::Ball3d).radius_pairs(&queries, 1.0);
    let mut b: Vec<(usize, usize)> = SpatialIndex::build(&reversed, 1.0, SearchMode::Ball3d)
        .radius_pairs(&queries, 1.0)
        .into_iter()
        .map(|(q, s)| (q, 99 - s))
        .collect();
    b.sort_unstable();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn radius_pairs_exact(
        seed in any::<u64>(),
        n_sup in 1usize..80,
        n_q in 1usize..120,
        r in 0.2f64..3.0,
        cell_scale in 0.3f64..2.0,
        bev in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let supports: Vec<Vec3> = (0..n_sup).map(|_| random_vec(&mut rng, 6.0)).collect();
        let mut queries: Vec<Vec3> = (0..n_q).map(|_| random_vec(&mut rng, 6.0)).collect();
        // Queries exactly at distance r along an axis from a support.
        queries.push(supports[0] + Vec3::new(r, 0.0, 0.0));
        queries.push(supports[0] - Vec3::new(0.0, r, 0.0));
        let mode = if bev { SearchMode::CylinderBev } else { SearchMode::Ball3d };
        let idx = SpatialIndex::build(&supports, r * cell_scale, mode);
        prop_assert_eq!(idx.radius_pairs(&queries, r), brute_pairs(&supports, &queries, r, bev));
    }

    #[test]
    fn augmentation_commutes_with_query_generation(seed in any::<u64>(), aug in any::<u64>(), uniform in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_vec(&mut rng, 3.0);
        let pts: Vec<Vec3> = (0..30).map(|_| c + random_vec(&mut rng, 20.0) + Vec3::new(0.0, 0.0, 25.0)).collect();
        let cloud = PointCloud::new(c, pts, None, None).unwrap();
        let mode = if uniform { OffsetMode::Uniform } else { OffsetMode::Fixed };
        let t = augmentation_transform(aug, true, true);
        let a = generate_queries(&cloud, 0.1, mode, seed).queries.transformed(&t);
        let b = generate_queries(&t.apply_cloud(&cloud), 0.1, mode, seed).queries;
        prop_assert_eq!(&a.kind, &b.kind);
        prop_assert_eq!(&a.source_index, &b.source_index);
        for (x, y) in a.positions.iter().zip(&b.positions) {
            prop_assert!(x.distance(*y) <= 1e-9);
        }
    }
}
