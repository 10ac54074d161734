//! Uniform hash grid for exact radius search.
//!
//! `Ball3d` pairs points by 3D Euclidean distance; `CylinderBev` ignores z and
//! pairs by horizontal distance, i.e. an infinite vertical cylinder.

use std::collections::HashMap;

use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SearchMode {
    Ball3d,
    CylinderBev,
}

impl SearchMode {
    /// Distance under this mode's metric.
    pub fn distance(self, a: Vec3, b: Vec3) -> f64 {
        match self {
            SearchMode::Ball3d => a.distance(b),
            SearchMode::CylinderBev => (a - b).norm_xy(),
        }
    }
}

type CellKey = (i64, i64, i64);

#[derive(Clone, Debug)]
pub struct SpatialIndex {
    cell_size: f64,
    mode: SearchMode,
    buckets: HashMap<CellKey, Vec<usize>>,
    points: Vec<Vec3>,
}

impl SpatialIndex {
    /// Hashes `points` into cells of side `cell_size`.
    pub fn build(points: &[Vec3], cell_size: f64, mode: SearchMode) -> Self {
        assert!(!points.is_empty(), "cannot index an empty point set");
        assert!(cell_size > 0.0, "cell size must be positive");
        let mut index = Self {
            cell_size,
            mode,
            buckets: HashMap::new(),
            points: points.to_vec(),
        };
        for (i, &p) in points.iter().enumerate() {
            let key = index.cell_of(p);
            index.buckets.entry(key).or_default().push(i);
        }
        index
    }

    pub fn mode(&self) -> SearchMode {
        self.mode
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Grid coordinates of `p`; the z coordinate is always 0 in BEV mode.
    pub fn cell_of(&self, p: Vec3) -> CellKey {
        let f = |v: f64| (v / self.cell_size).floor() as i64;
        match self.mode {
            SearchMode::Ball3d => (f(p.x), f(p.y), f(p.z)),
            SearchMode::CylinderBev => (f(p.x), f(p.y), 0),
        }
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&CellKey, &[usize])> {
        self.buckets.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Cell range covering `[v - r, v + r]`, padded so that rounding in the
    /// division never drops a boundary cell.
    fn cell_span(&self, v: f64, r: f64) -> (i64, i64) {
        let pad = r * 1e-9 + 1e-12;
        (
            ((v - r - pad) / self.cell_size).floor() as i64,
            ((v + r + pad) / self.cell_size).floor() as i64,
        )
    }

    /// Indexed points within distance `r` of `q` (inclusive), ascending.
    pub fn within(&self, q: Vec3, r: f64, out: &mut Vec<usize>) {
        out.clear();
        let (x0, x1) = self.cell_span(q.x, r);
        let (y0, y1) = self.cell_span(q.y, r);
        let (z0, z1) = match self.mode {
            SearchMode::Ball3d => self.cell_span(q.z, r),
            SearchMode::CylinderBev => (0, 0),
        };
        for x in x0..=x1 {
            for y in y0..=y1 {
                for z in z0..=z1 {
                    let Some(bucket) = self.buckets.get(&(x, y, z)) else {
                        continue;
                    };
                    out.extend(
                        bucket
                            .iter()
                            .copied()
                            .filter(|&s| self.mode.distance(q, self.points[s]) <= r),
                    );
                }
            }
        }
        out.sort_unstable();
    }

    /// All `(query, support)` pairs with distance `<= r`, sorted by query
    /// then support index.
    pub fn radius_pairs(&self, queries: &[Vec3], r: f64) -> Vec<(usize, usize)> {
        assert!(r > 0.0, "radius must be positive");
        let mut pairs = Vec::new();
        let mut found = Vec::new();
        for (qi, &q) in queries.iter().enumerate() {
            self.within(q, r, &mut found);
            pairs.extend(found.iter().map(|&s| (qi, s)));
        }
        pairs
    }
}
