//! 3D vectors, the point-cloud container and rigid augmentations.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::seq::index;
use rand::Rng;

use crate::rng::{keyed_rng, Stream};
use crate::CoreError;

/// Points closer than this to the sensor origin have no usable line of sight.
pub const EPS_GEOM: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_xy(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rounds every component to the nearest 32-bit float.
    pub fn to_f32_precision(self) -> Vec3 {
        Vec3::new(
            self.x as f32 as f64,
            self.y as f32 as f64,
            self.z as f32 as f64,
        )
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// One lidar frame: the sensor center plus the returns it observed.
///
/// Construction validates every invariant, so a `PointCloud` in hand is
/// always non-empty, finite, and free of points sitting on the sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    sensor_origin: Vec3,
    points: Vec<Vec3>,
    intensities: Option<Vec<f64>>,
    labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(
        sensor_origin: Vec3,
        points: Vec<Vec3>,
        intensities: Option<Vec<f64>>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self, CoreError> {
        if points.is_empty() {
            return Err(CoreError::EmptyCloud);
        }
        if !sensor_origin.is_finite() {
            return Err(CoreError::NonFinite("sensor origin"));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.is_finite() {
                return Err(CoreError::NonFinite("point"));
            }
            if p.distance(sensor_origin) <= EPS_GEOM {
                return Err(CoreError::PointAtSensor(i));
            }
        }
        if let Some(ints) = &intensities {
            if ints.len() != points.len() {
                return Err(CoreError::LengthMismatch {
                    what: "intensities",
                    expected: points.len(),
                    got: ints.len(),
                });
            }
            if let Some(i) = ints.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(CoreError::IntensityOutOfRange(i));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != points.len() {
                return Err(CoreError::LengthMismatch {
                    what: "labels",
                    expected: points.len(),
                    got: labels.len(),
                });
            }
        }
        Ok(Self {
            sensor_origin,
            points,
            intensities,
            labels,
        })
    }

    pub fn sensor_origin(&self) -> Vec3 {
        self.sensor_origin
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn intensities(&self) -> Option<&[f64]> {
        self.intensities.as_deref()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Intensity of point `i`, or 0 when the cloud carries none.
    pub fn intensity_or_zero(&self, i: usize) -> f64 {
        self.intensities.as_ref().map_or(0.0, |v| v[i])
    }

    /// Keeps the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, CoreError> {
        PointCloud::new(
            self.sensor_origin,
            indices.iter().map(|&i| self.points[i]).collect(),
            self.intensities
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
            self.labels
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        )
    }

    /// Drops the intensity channel.
    pub fn without_intensities(&self) -> Self {
        Self {
            intensities: None,
            ..self.clone()
        }
    }

    /// Rounds positions and intensities to 32-bit precision, the precision of
    /// every on-disk format.
    pub fn quantized_f32(&self) -> Result<Self, CoreError> {
        PointCloud::new(
            self.sensor_origin.to_f32_precision(),
            self.points.iter().map(|p| p.to_f32_precision()).collect(),
            self.intensities
                .as_ref()
                .map(|v| v.iter().map(|&i| i as f32 as f64).collect()),
            self.labels.clone(),
        )
    }
}

/// Rotation about z followed by optional sign flips of x and y.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    cos: f64,
    sin: f64,
    flip_x: bool,
    flip_y: bool,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        cos: 1.0,
        sin: 0.0,
        flip_x: false,
        flip_y: false,
    };

    pub fn new(theta: f64, flip_x: bool, flip_y: bool) -> Self {
        Self {
            cos: theta.cos(),
            sin: theta.sin(),
            flip_x,
            flip_y,
        }
    }

    /// Draws θ ~ U[0, 2π) and two fair coin flips. All three values are drawn
    /// regardless of the flags so that each flag leaves the other draws alone.
    pub fn sample<R: Rng>(rng: &mut R, enable_rotation: bool, enable_flips: bool) -> Self {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let fx: bool = rng.random();
        let fy: bool = rng.random();
        RigidTransform::new(
            if enable_rotation { theta } else { 0.0 },
            enable_flips && fx,
            enable_flips && fy,
        )
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let x = self.cos * p.x - self.sin * p.y;
        let y = self.sin * p.x + self.cos * p.y;
        Vec3::new(
            if self.flip_x { -x } else { x },
            if self.flip_y { -y } else { y },
            p.z,
        )
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            sensor_origin: self.apply(cloud.sensor_origin),
            points: cloud.points.iter().map(|&p| self.apply(p)).collect(),
            intensities: cloud.intensities.clone(),
            labels: cloud.labels.clone(),
        }
    }
}

/// Draws the augmentation transform used by [`augment`] for `seed`.
pub fn augmentation_transform(
    seed: u64,
    enable_rotation: bool,
    enable_flips: bool,
) -> RigidTransform {
    let mut rng = keyed_rng(seed, Stream::Augment, 0);
    RigidTransform::sample(&mut rng, enable_rotation, enable_flips)
}

/// Applies one random rigid transform to every point and to the sensor origin.
pub fn augment(
    cloud: &PointCloud,
    seed: u64,
    enable_rotation: bool,
    enable_flips: bool,
) -> PointCloud {
    augmentation_transform(seed, enable_rotation, enable_flips).apply_cloud(cloud)
}

/// Indices kept by [`downsample`], sorted ascending.
pub fn downsample_indices(n: usize, max_points: usize, seed: u64) -> Vec<usize> {
    if n <= max_points {
        return (0..n).collect();
    }
    let mut rng = keyed_rng(seed, Stream::Downsample, 0);
    let mut kept = index::sample(&mut rng, n, max_points).into_vec();
    kept.sort_unstable();
    kept
}

/// Uniform random subset of `max_points` points, without replacement.
pub fn downsample(cloud: &PointCloud, max_points: usize, seed: u64) -> PointCloud {
    assert!(max_points >= 1, "max_points must be at least 1");
    if cloud.len() <= max_points {
        return cloud.clone();
    }
    cloud
        .select(&downsample_indices(cloud.len(), max_points, seed))
        .expect("a subset of a valid cloud is valid")
}
