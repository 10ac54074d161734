//! Visibility-derived occupancy queries.
//!
//! For every observed point `p` seen from sensor center `c`, three queries are
//! placed on the line of sight: one just in front of `p` (empty), one just
//! behind it (full), and one uniformly on the open segment `(c, p)` (empty).

use rand::seq::index;
use rand::Rng;

use crate::geometry::{PointCloud, RigidTransform, Vec3};
use crate::rng::{keyed_rng, Stream};
use crate::CoreError;

/// Default query offset, in meters.
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueryKind {
    Front,
    Behind,
    Sight,
}

impl QueryKind {
    pub fn code(self) -> u8 {
        match self {
            QueryKind::Front => 0,
            QueryKind::Behind => 1,
            QueryKind::Sight => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(QueryKind::Front),
            1 => Some(QueryKind::Behind),
            2 => Some(QueryKind::Sight),
            _ => None,
        }
    }

    /// Occupancy implied by visibility: only queries behind a return are full.
    pub fn occupied(self) -> bool {
        self == QueryKind::Behind
    }
}

/// How far the front and behind queries sit from their point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OffsetMode {
    /// Both offsets equal `delta`.
    Fixed,
    /// Both offsets drawn independently from `U(0, delta]`.
    Uniform,
}

impl OffsetMode {
    pub fn name(self) -> &'static str {
        match self {
            OffsetMode::Fixed => "fixed",
            OffsetMode::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed" => Some(OffsetMode::Fixed),
            "uniform" => Some(OffsetMode::Uniform),
            _ => None,
        }
    }
}

/// Generation parameters carried alongside a query set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryMeta {
    pub delta: f64,
    pub mode: OffsetMode,
    pub seed: u64,
}

/// Co-indexed query columns. `intensity_target` is `None` for sight queries
/// and for clouds without intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub meta: QueryMeta,
    pub positions: Vec<Vec3>,
    pub occupancy: Vec<bool>,
    pub intensity_target: Vec<Option<f64>>,
    pub kind: Vec<QueryKind>,
    pub source_index: Vec<usize>,
}

impl QuerySet {
    pub fn empty(meta: QueryMeta) -> Self {
        Self {
            meta,
            positions: Vec::new(),
            occupancy: Vec::new(),
            intensity_target: Vec::new(),
            kind: Vec::new(),
            source_index: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn push(&mut self, position: Vec3, kind: QueryKind, intensity: Option<f64>, source: usize) {
        self.positions.push(position);
        self.occupancy.push(kind.occupied());
        self.intensity_target.push(if kind == QueryKind::Sight {
            None
        } else {
            intensity
        });
        self.kind.push(kind);
        self.source_index.push(source);
    }

    /// Checks column lengths and the kind/occupancy/intensity table.
    pub fn validate(&self) -> Result<(), CoreError> {
        let n = self.positions.len();
        for (what, len) in [
            ("occupancy", self.occupancy.len()),
            ("intensity targets", self.intensity_target.len()),
            ("kinds", self.kind.len()),
            ("source indices", self.source_index.len()),
        ] {
            if len != n {
                return Err(CoreError::LengthMismatch {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        for i in 0..n {
            if !self.positions[i].is_finite() {
                return Err(CoreError::NonFinite("query position"));
            }
            if self.occupancy[i] != self.kind[i].occupied() {
                return Err(CoreError::InvalidQuery {
                    index: i,
                    reason: "occupancy contradicts kind",
                });
            }
            match self.intensity_target[i] {
                Some(_) if self.kind[i] == QueryKind::Sight => {
                    return Err(CoreError::InvalidQuery {
                        index: i,
                        reason: "sight query with an intensity target",
                    })
                }
                Some(v) if !(0.0..=1.0).contains(&v) => {
                    return Err(CoreError::InvalidQuery {
                        index: i,
                        reason: "intensity target outside [0, 1]",
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Keeps the queries at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            meta: self.meta,
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            occupancy: indices.iter().map(|&i| self.occupancy[i]).collect(),
            intensity_target: indices.iter().map(|&i| self.intensity_target[i]).collect(),
            kind: indices.iter().map(|&i| self.kind[i]).collect(),
            source_index: indices.iter().map(|&i| self.source_index[i]).collect(),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            positions: self.positions.iter().map(|&p| t.apply(p)).collect(),
            ..self.clone()
        }
    }

    /// Rounds positions and intensity targets to 32-bit precision.
    pub fn quantized_f32(&self) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|p| p.to_f32_precision())
                .collect(),
            intensity_target: self
                .intensity_target
                .iter()
                .map(|t| t.map(|v| v as f32 as f64))
                .collect(),
            ..self.clone()
        }
    }
}

/// Output of [`generate_queries`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedQueries {
    pub queries: QuerySet,
    /// Points dropped because their front query would reach the sensor.
    pub skipped: usize,
}

/// Uniform draw on `(0, 1]`.
fn unit_open_closed<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Uniform draw on the open interval `(0, 1)`.
fn unit_open<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let t = rng.random::<f64>();
        if t > 0.0 {
            return t;
        }
    }
}

/// Builds front/behind/sight queries for every point of `cloud`.
///
/// Offsets and the sight parameter of point `i` come from the stream keyed by
/// `(seed, i)`, so a rigidly transformed cloud yields the transformed queries.
/// Output order is `front, behind, sight` per point, points in cloud order.
pub fn generate_queries(
    cloud: &PointCloud,
    delta: f64,
    mode: OffsetMode,
    seed: u64,
) -> GeneratedQueries {
    assert!(delta > 0.0, "delta must be positive");
    let c = cloud.sensor_origin();
    let mut queries = QuerySet::empty(QueryMeta { delta, mode, seed });
    let mut skipped = 0;
    for (i, &p) in cloud.points().iter().enumerate() {
        let mut rng = keyed_rng(seed, Stream::Query, i as u64);
        let (u_front, u_behind, t_sight) = (
            unit_open_closed(&mut rng),
            unit_open_closed(&mut rng),
            unit_open(&mut rng),
        );
        let (d_front, d_behind) = match mode {
            OffsetMode::Fixed => (delta, delta),
            OffsetMode::Uniform => (delta * u_front, delta * u_behind),
        };
        let ray = p - c;
        let range = ray.norm();
        if range <= d_front {
            skipped += 1;
            continue;
        }
        let dir = ray * (1.0 / range);
        let intensity = cloud.intensities().map(|v| v[i]);
        queries.push(p - dir * d_front, QueryKind::Front, intensity, i);
        queries.push(p + dir * d_behind, QueryKind::Behind, intensity, i);
        queries.push(c + ray * t_sight, QueryKind::Sight, None, i);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} points closer to the sensor than their front offset");
    }
    GeneratedQueries { queries, skipped }
}

/// Sorted indices kept by [`subsample_queries`].
pub fn subsample_indices(n: usize, max_queries: usize, seed: u64) -> Vec<usize> {
    if n <= max_queries {
        return (0..n).collect();
    }
    let mut rng = keyed_rng(seed, Stream::QuerySubsample, 0);
    let mut kept = index::sample(&mut rng, n, max_queries).into_vec();
    kept.sort_unstable();
    kept
}

/// Uniform random subset of at most `max_queries` queries.
pub fn subsample_queries(qs: &QuerySet, max_queries: usize, seed: u64) -> QuerySet {
    assert!(max_queries >= 1, "max_queries must be at least 1");
    if qs.len() <= max_queries {
        return qs.clone();
    }
    qs.select(&subsample_indices(qs.len(), max_queries, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::augmentation_transform;

    fn two_meter_cloud() -> PointCloud {
        PointCloud::new(
            Vec3::ZERO,
            vec![Vec3::new(2.0, 0.0, 0.0)],
            Some(vec![0.45]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn fixed_offsets_on_axis() {
        let g = generate_queries(&two_meter_cloud(), 0.1, OffsetMode::Fixed, 3);
        let q = &g.queries;
        assert_eq!(q.len(), 3);
        assert_eq!(
            q.kind,
            vec![QueryKind::Front, QueryKind::Behind, QueryKind::Sight]
        );
        assert!((q.positions[0] - Vec3::new(1.9, 0.0, 0.0)).norm() < 1e-15);
        assert!((q.positions[1] - Vec3::new(2.1, 0.0, 0.0)).norm() < 1e-15);
        let s = q.positions[2];
        assert!(s.x > 0.0 && s.x < 2.0 && s.y == 0.0 && s.z == 0.0);
        assert_eq!(q.occupancy, vec![false, true, false]);
        assert_eq!(q.intensity_target, vec![Some(0.45), Some(0.45), None]);
        assert_eq!(q.source_index, vec![0, 0, 0]);
        q.validate().unwrap();
    }

    #[test]
    fn points_inside_delta_are_skipped() {
        let cloud = PointCloud::new(
            Vec3::ZERO,
            vec![Vec3::new(0.05, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)],
            None,
            None,
        )
        .unwrap();
        let g = generate_queries(&cloud, 0.1, OffsetMode::Fixed, 1);
        assert_eq!(g.skipped, 1);
        assert_eq!(g.queries.len(), 3);
        assert!(g.queries.source_index.iter().all(|&i| i == 1));
        assert!(g.queries.intensity_target.iter().all(Option::is_none));
    }

    #[test]
    fn validate_catches_label_errors() {
        let mut q = generate_queries(&two_meter_cloud(), 0.1, OffsetMode::Uniform, 3).queries;
        q.occupancy[0] = true;
        assert!(q.validate().is_err());
        let mut q = generate_queries(&two_meter_cloud(), 0.1, OffsetMode::Uniform, 3).queries;
        q.intensity_target[2] = Some(0.5);
        assert!(q.validate().is_err());
        let mut q = generate_queries(&two_meter_cloud(), 0.1, OffsetMode::Uniform, 3).queries;
        q.kind.pop();
        assert!(matches!(
            q.validate(),
            Err(CoreError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn no_query_duplicates_an_input_point() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| Vec3::new(1.0 + i as f64 * 0.3, (i as f64).sin(), 0.5))
            .collect();
        let cloud = PointCloud::new(Vec3::ZERO, pts.clone(), None, None).unwrap();
        let q = generate_queries(&cloud, 0.1, OffsetMode::Fixed, 9).queries;
        for p in &q.positions {
            assert!(pts.iter().all(|x| x != p));
        }
    }

    #[test]
    fn equivariant_under_augmentation() {
        let pts: Vec<Vec3> = (0..40)
            .map(|i| Vec3::new(3.0 + i as f64 * 0.5, 2.0 * (i as f64).cos(), 0.1 * i as f64))
            .collect();
        let cloud =
            PointCloud::new(Vec3::new(0.3, 0.2, 1.7), pts, Some(vec![0.5; 40]), None).unwrap();
        for mode in [OffsetMode::Fixed, OffsetMode::Uniform] {
            let t = augmentation_transform(77, true, true);
            let before = generate_queries(&cloud, 0.1, mode, 5)
                .queries
                .transformed(&t);
            let after = generate_queries(&t.apply_cloud(&cloud), 0.1, mode, 5).queries;
            assert_eq!(before.kind, after.kind);
            assert_eq!(before.occupancy, after.occupancy);
            for (a, b) in before.positions.iter().zip(&after.positions) {
                assert!(a.distance(*b) <= 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn subsample_keeps_columns_aligned() {
        let pts: Vec<Vec3> = (0..1000)
            .map(|i| Vec3::new(2.0 + (i % 37) as f64, (i / 37) as f64, 0.0))
            .collect();
        let ints: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let cloud = PointCloud::new(Vec3::new(0.0, 0.0, 1.0), pts, Some(ints), None).unwrap();
        let all = generate_queries(&cloud, 0.1, OffsetMode::Uniform, 1).queries;
        assert_eq!(all.len(), 3000);
        let sub = subsample_queries(&all, 2000, 4);
        assert_eq!(sub.len(), 2000);
        sub.validate().unwrap();
        for k in 0..sub.len() {
            let src = sub.source_index[k];
            if sub.kind[k] != QueryKind::Sight {
                assert_eq!(sub.intensity_target[k], Some(src as f64 / 1000.0));
            }
            let j = all
                .positions
                .iter()
                .position(|p| *p == sub.positions[k])
                .unwrap();
            assert_eq!(all.kind[j], sub.kind[k]);
            assert_eq!(all.source_index[j], src);
        }
        let small = subsample_queries(&all.select(&[0, 1, 2, 3, 4, 5, 6, 7, 8]), 20, 4);
        assert_eq!(small.len(), 9);
    }
}
