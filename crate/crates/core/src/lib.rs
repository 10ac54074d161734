//! Geometry, synthetic lidar, visibility queries and radius search.

pub mod geometry;
pub mod lidar;
pub mod queries;
pub mod rng;
pub mod spatial;

pub use geometry::{augment, downsample, PointCloud, RigidTransform, Vec3, EPS_GEOM};
pub use lidar::{cast_scan, sample_scene, Scene, SceneConfig, SensorModel};
pub use queries::{generate_queries, subsample_queries, OffsetMode, QueryKind, QuerySet};
pub use spatial::{SearchMode, SpatialIndex};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("point {0} coincides with the sensor origin")]
    PointAtSensor(usize),
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("intensity of point {0} is outside [0, 1]")]
    IntensityOutOfRange(usize),
    #[error("query {index}: {reason}")]
    InvalidQuery { index: usize, reason: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not place a primitive clear of the sensor after {tries} tries")]
    Placement { tries: usize },
    #[error("no ray returned a hit")]
    NoReturns,
}
