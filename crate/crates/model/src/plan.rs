//! Supports and the (query, support) pairing that drives the decoder.

use std::collections::BTreeMap;

use visocc_core::{SearchMode, SpatialIndex, Vec3};

/// Where latents live.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SupportMode {
    /// One support per input point, paired in 3D balls.
    Points,
    /// One support per occupied bird's-eye-view cell, paired in vertical cylinders.
    Bev { pitch: f64 },
}

impl SupportMode {
    pub fn search_mode(self) -> SearchMode {
        match self {
            SupportMode::Points => SearchMode::Ball3d,
            SupportMode::Bev { .. } => SearchMode::CylinderBev,
        }
    }
}

/// How predictions are formed from the supports around a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    /// Every in-range support predicts the query on its own.
    PerPointBall,
    /// In-range latents are averaged, one prediction per query.
    BallAvg,
    /// In-range latents are max-pooled, one prediction per query.
    BallMax,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::PerPointBall, Head::BallAvg, Head::BallMax];

    pub fn name(self) -> &'static str {
        match self {
            Head::PerPointBall => "per_point_ball",
            Head::BallAvg => "ball_avg",
            Head::BallMax => "ball_max",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Head::ALL.into_iter().find(|h| h.name() == s)
    }
}

/// Support positions, plus for BEV the input points pooled into each cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Supports {
    pub positions: Vec<Vec3>,
    /// BEV only: cell `c` pools points `members[offsets[c]..offsets[c + 1]]`.
    pub members: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl Supports {
    pub fn new(points: &[Vec3], mode: SupportMode) -> Self {
        match mode {
            SupportMode::Points => Self {
                positions: points.to_vec(),
                members: Vec::new(),
                offsets: Vec::new(),
            },
            SupportMode::Bev { pitch } => {
                let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
                for (i, p) in points.iter().enumerate() {
                    cells.entry(bev_cell(*p, pitch)).or_default().push(i);
                }
                let mut positions = Vec::with_capacity(cells.len());
                let mut members = Vec::with_capacity(points.len());
                let mut offsets = vec![0];
                for ((ix, iy), idx) in cells {
                    positions.push(Vec3::new(
                        (ix as f64 + 0.5) * pitch,
                        (iy as f64 + 0.5) * pitch,
                        0.0,
                    ));
                    members.extend(idx);
                    offsets.push(members.len());
                }
                Self {
                    positions,
                    members,
                    offsets,
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn bev_cell(p: Vec3, pitch: f64) -> (i64, i64) {
    ((p.x / pitch).floor() as i64, (p.y / pitch).floor() as i64)
}

/// Prediction rows for one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodePlan {
    pub head: Head,
    /// All in-range `(query, support)` pairs, sorted.
    pub pairs: Vec<(usize, usize)>,
    /// Per prediction row, `(query, support)`. For pooled heads the support
    /// is the nearest in-range one and provides the relative coordinates.
    pub rows: Vec<(usize, usize)>,
    /// Pooled heads: row `i` pools `pairs[offsets[i]..offsets[i + 1]]`.
    pub offsets: Vec<usize>,
    /// Per prediction row, `q − s`.
    pub relative: Vec<Vec3>,
}

impl DecodePlan {
    pub fn new(supports: &[Vec3], mode: SearchMode, queries: &[Vec3], r: f64, head: Head) -> Self {
        let pairs = if supports.is_empty() || queries.is_empty() {
            Vec::new()
        } else {
            SpatialIndex::build(supports, r, mode).radius_pairs(queries, r)
        };
        let (rows, offsets) = match head {
            Head::PerPointBall => (pairs.clone(), Vec::new()),
            Head::BallAvg | Head::BallMax => {
                let mut rows = Vec::new();
                let mut offsets = vec![0];
                let mut start = 0;
                while start < pairs.len() {
                    let q = pairs[start].0;
                    let mut end = start;
                    let mut best = (f64::INFINITY, 0);
                    while end < pairs.len() && pairs[end].0 == q {
                        let s = pairs[end].1;
                        let d = mode.distance(queries[q], supports[s]);
                        if d < best.0 {
                            best = (d, s);
                        }
                        end += 1;
                    }
                    rows.push((q, best.1));
                    offsets.push(end);
                    start = end;
                }
                (rows, offsets)
            }
        };
        let relative = rows
            .iter()
            .map(|&(q, s)| queries[q] - supports[s])
            .collect();
        Self {
            head,
            pairs,
            rows,
            offsets,
            relative,
        }
    }

    /// Sorted distinct supports that take part in any pair.
    pub fn used_supports(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self.pairs.iter().map(|&(_, s)| s).collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_names_round_trip() {
        for h in Head::ALL {
            assert_eq!(Head::parse(h.name()), Some(h));
        }
        assert_eq!(Head::parse("attention"), None);
    }

    #[test]
    fn pooled_rows_take_nearest_support() {
        let supports = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::new(0.9, 0.0, 0.0),
        ];
        let queries = vec![Vec3::new(0.6, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0)];
        let per_point = DecodePlan::new(
            &supports,
            SearchMode::Ball3d,
            &queries,
            1.0,
            Head::PerPointBall,
        );
        assert_eq!(per_point.rows, vec![(0, 0), (0, 1), (0, 2)]);
        let avg = DecodePlan::new(&supports, SearchMode::Ball3d, &queries, 1.0, Head::BallAvg);
        assert_eq!(avg.rows, vec![(0, 1)]);
        assert_eq!(avg.offsets, vec![0, 3]);
        assert!((avg.relative[0].x - 0.1).abs() < 1e-12);
    }

    #[test]
    fn bev_cells_pool_points() {
        let pts = vec![
            Vec3::new(0.2, 0.3, 1.0),
            Vec3::new(-0.1, 0.1, 0.0),
            Vec3::new(0.4, 0.1, -2.0),
        ];
        let s = Supports::new(&pts, SupportMode::Bev { pitch: 0.5 });
        assert_eq!(
            s.positions,
            vec![Vec3::new(-0.25, 0.25, 0.0), Vec3::new(0.25, 0.25, 0.0)]
        );
        assert_eq!(s.members, vec![1, 0, 2]);
        assert_eq!(s.offsets, vec![0, 1, 3]);
    }
}
