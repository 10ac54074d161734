//! Scene streams: deterministic scans per `(data seed, scene index)` and
//! their visibility queries.

use std::ops::Range;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use visocc_core::lidar::scene_seed;
use visocc_core::rng::{derive_seed, keyed_rng, Stream};
use visocc_core::{
    cast_scan, downsample, generate_queries, sample_scene, OffsetMode, PointCloud, QuerySet, Scene,
    SceneConfig, SensorModel,
};

use crate::{Result, TrainError};

/// First scene index of each split. Splits are far apart so that any
/// realistic count keeps them disjoint; [`assert_disjoint`] checks it.
pub const PRETRAIN_START: u64 = 0;
pub const PROBE_TRAIN_START: u64 = 1_000_000;
pub const PROBE_EVAL_START: u64 = 1_500_000;
pub const HELD_OUT_START: u64 = 2_000_000;

/// A contiguous block of scene indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneRange {
    pub start: u64,
    pub count: u64,
}

impl SceneRange {
    pub fn new(start: u64, count: u64) -> Self {
        Self { start, count }
    }

    pub fn indices(&self) -> Range<u64> {
        self.start..self.start + self.count
    }

    pub fn overlaps(&self, other: &SceneRange) -> bool {
        self.count > 0
            && other.count > 0
            && self.start < other.start + other.count
            && other.start < self.start + self.count
    }
}

/// Fails if any two named ranges share a scene index.
pub fn assert_disjoint(ranges: &[(&str, SceneRange)]) -> Result<()> {
    for (i, (a, ra)) in ranges.iter().enumerate() {
        for (b, rb) in &ranges[i + 1..] {
            if ra.overlaps(rb) {
                return Err(TrainError::OverlappingScenes(
                    format!("{a} {ra:?}"),
                    format!("{b} {rb:?}"),
                ));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub scene: SceneConfig,
    pub sensor: SensorModel,
    /// Root of every scene, ray-noise and downsampling stream.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            sensor: SensorModel::default(),
            seed: 0,
        }
    }
}

impl DataConfig {
    /// Distinct class ids of the scene generator, ascending.
    pub fn classes(&self) -> Vec<u32> {
        let mut c = self.scene.class_ids.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// A downsampled scan at 32-bit precision, tagged with its scene index.
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub index: u64,
    pub cloud: PointCloud,
}

/// A scan with its full query set.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub cloud: PointCloud,
    pub queries: QuerySet,
}

pub fn scene(data: &DataConfig, index: u64) -> Result<Scene> {
    Ok(sample_scene(&data.scene, scene_seed(data.seed, index))?)
}

/// Cast, round to 32 bits, and keep at most `max_points` returns.
pub fn simulate_scan(
    data: &DataConfig,
    scene: &Scene,
    index: u64,
    max_points: usize,
) -> Result<Scan> {
    let raw = cast_scan(
        scene,
        &data.sensor,
        derive_seed(data.seed, Stream::Ray, index),
    )?
    .quantized_f32()?;
    let cloud = downsample(
        &raw,
        max_points,
        derive_seed(data.seed, Stream::Downsample, index),
    );
    Ok(Scan { index, cloud })
}

/// Scans of every scene in `range`, in index order.
pub fn simulate_scans(
    data: &DataConfig,
    range: SceneRange,
    max_points: usize,
) -> Result<Vec<Scan>> {
    range
        .indices()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&i| simulate_scan(data, &scene(data, i)?, i, max_points))
        .collect()
}

/// Visibility queries of a scan, rounded to 32 bits.
pub fn make_frame(scan: &Scan, data_seed: u64, delta: f64, mode: OffsetMode) -> Frame {
    let seed = derive_seed(data_seed, Stream::Query, scan.index);
    let queries = generate_queries(&scan.cloud, delta, mode, seed)
        .queries
        .quantized_f32();
    Frame {
        index: scan.index,
        cloud: scan.cloud.clone(),
        queries,
    }
}

pub fn make_frames(scans: &[Scan], data_seed: u64, delta: f64, mode: OffsetMode) -> Vec<Frame> {
    scans
        .par_iter()
        .map(|s| make_frame(s, data_seed, delta, mode))
        .collect()
}

/// Permutation of `0..n` drawn from the stream `(seed, stream, index)`.
pub fn shuffled(n: usize, seed: u64, stream: Stream, index: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, stream, index));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_overlap() {
        let a = SceneRange::new(0, 10);
        assert!(a.overlaps(&SceneRange::new(9, 1)));
        assert!(!a.overlaps(&SceneRange::new(10, 5)));
        assert!(!a.overlaps(&SceneRange::new(3, 0)));
        assert!(assert_disjoint(&[("a", a), ("b", SceneRange::new(5, 10))]).is_err());
        assert!(
            assert_disjoint(&[("a", a), ("b", SceneRange::new(PROBE_TRAIN_START, 10))]).is_ok()
        );
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut p = shuffled(50, 3, Stream::Shuffle, 7);
        assert_ne!(p, (0..50).collect::<Vec<_>>());
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
