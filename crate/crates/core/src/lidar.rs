//! Synthetic lidar: scenes of analytic primitives and a rotating multi-beam
//! sensor ray-cast against them.
//!
//! Every solid is closed and the ground is the half-space below the plane, so
//! [`Scene::true_occupancy`] gives exact ground truth for any location.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::geometry::{PointCloud, Vec3, EPS_GEOM};
use crate::rng::{derive_seed, keyed_rng, Stream};
use crate::CoreError;

/// Hits closer than this along a ray are ignored.
const T_MIN: f64 = 1e-9;

/// Placement attempts per primitive before [`sample_scene`] gives up.
const MAX_PLACEMENT_TRIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    GroundPlane,
    Box,
    Cylinder,
    Sphere,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [
        PrimitiveKind::GroundPlane,
        PrimitiveKind::Box,
        PrimitiveKind::Cylinder,
        PrimitiveKind::Sphere,
    ];

    pub fn index(self) -> usize {
        match self {
            PrimitiveKind::GroundPlane => 0,
            PrimitiveKind::Box => 1,
            PrimitiveKind::Cylinder => 2,
            PrimitiveKind::Sphere => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Solid half-space `z <= height`.
    GroundPlane {
        height: f64,
    },
    /// Box rotated by `yaw` radians about its vertical center axis.
    Box {
        center: Vec3,
        half_extents: Vec3,
        yaw: f64,
    },
    /// Capped vertical cylinder spanning `base.z ..= base.z + height`.
    Cylinder {
        base: Vec3,
        radius: f64,
        height: f64,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub class_id: u32,
    pub base_intensity: f64,
}

fn to_box_frame(p: Vec3, center: Vec3, yaw: f64) -> Vec3 {
    let d = p - center;
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
}

fn rotate_dir_to_box_frame(d: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
}

/// Real roots of `a t² + 2 b t + c = 0` in ascending order, for `a > 0`.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    if a <= 0.0 {
        return None;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    Some(((-b - sq) / a, (-b + sq) / a))
}

impl Shape {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Shape::GroundPlane { .. } => PrimitiveKind::GroundPlane,
            Shape::Box { .. } => PrimitiveKind::Box,
            Shape::Cylinder { .. } => PrimitiveKind::Cylinder,
            Shape::Sphere { .. } => PrimitiveKind::Sphere,
        }
    }

    /// Whether `x` is inside the closed solid.
    pub fn contains(&self, x: Vec3) -> bool {
        match *self {
            Shape::GroundPlane { height } => x.z <= height,
            Shape::Box {
                center,
                half_extents,
                yaw,
            } => {
                let l = to_box_frame(x, center, yaw);
                l.x.abs() <= half_extents.x
                    && l.y.abs() <= half_extents.y
                    && l.z.abs() <= half_extents.z
            }
            Shape::Cylinder {
                base,
                radius,
                height,
            } => {
                let (dx, dy) = (x.x - base.x, x.y - base.y);
                dx * dx + dy * dy <= radius * radius && x.z >= base.z && x.z <= base.z + height
            }
            Shape::Sphere { center, radius } => {
                let d = x - center;
                d.dot(d) <= radius * radius
            }
        }
    }

    /// Exact signed distance: negative inside, zero on the surface.
    pub fn signed_distance(&self, x: Vec3) -> f64 {
        match *self {
            Shape::GroundPlane { height } => x.z - height,
            Shape::Box {
                center,
                half_extents,
                yaw,
            } => {
                let l = to_box_frame(x, center, yaw);
                let q = Vec3::new(
                    l.x.abs() - half_extents.x,
                    l.y.abs() - half_extents.y,
                    l.z.abs() - half_extents.z,
                );
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                outside + q.x.max(q.y).max(q.z).min(0.0)
            }
            Shape::Cylinder {
                base,
                radius,
                height,
            } => {
                let half = 0.5 * height;
                let radial = Vec3::new(x.x - base.x, x.y - base.y, 0.0).norm() - radius;
                let axial = (x.z - (base.z + half)).abs() - half;
                let outside = (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt();
                outside + radial.max(axial).min(0.0)
            }
            Shape::Sphere { center, radius } => x.distance(center) - radius,
        }
    }

    /// Distance along the ray `origin + t * dir` to the first surface
    /// crossing with `t > T_MIN`. `dir` must be a unit vector.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        match *self {
            Shape::GroundPlane { height } => {
                if dir.z == 0.0 {
                    return None;
                }
                let t = (height - origin.z) / dir.z;
                (t > T_MIN).then_some(t)
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let (t0, t1) = quadratic_roots(1.0, dir.dot(oc), oc.dot(oc) - radius * radius)?;
                if t0 > T_MIN {
                    Some(t0)
                } else {
                    (t1 > T_MIN).then_some(t1)
                }
            }
            Shape::Box {
                center,
                half_extents,
                yaw,
            } => {
                let o = to_box_frame(origin, center, yaw);
                let d = rotate_dir_to_box_frame(dir, yaw);
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for (o, d, h) in [
                    (o.x, d.x, half_extents.x),
                    (o.y, d.y, half_extents.y),
                    (o.z, d.z, half_extents.z),
                ] {
                    if d == 0.0 {
                        if o.abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((-h - o) / d, (h - o) / d);
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far {
                    return None;
                }
                if t_near > T_MIN {
                    Some(t_near)
                } else {
                    (t_far > T_MIN).then_some(t_far)
                }
            }
            Shape::Cylinder {
                base,
                radius,
                height,
            } => {
                let (z0, z1) = (base.z, base.z + height);
                let (ox, oy) = (origin.x - base.x, origin.y - base.y);
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > T_MIN && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let a = dir.x * dir.x + dir.y * dir.y;
                if let Some((t0, t1)) = quadratic_roots(
                    a,
                    dir.x * ox + dir.y * oy,
                    ox * ox + oy * oy - radius * radius,
                ) {
                    for t in [t0, t1] {
                        let z = origin.z + t * dir.z;
                        if z >= z0 && z <= z1 {
                            consider(t);
                        }
                    }
                }
                if dir.z != 0.0 {
                    for cap in [z0, z1] {
                        let t = (cap - origin.z) / dir.z;
                        let (px, py) = (ox + t * dir.x, oy + t * dir.y);
                        if px * px + py * py <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
        }
    }
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        self.shape.kind()
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub bounds: Aabb,
}

/// Nearest intersection along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub primitive: usize,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>, bounds: Aabb) -> Result<Self, CoreError> {
        if primitives.is_empty() {
            return Err(CoreError::InvalidConfig("scene has no primitives".into()));
        }
        for p in &primitives {
            if !(0.0..=1.0).contains(&p.base_intensity) {
                return Err(CoreError::InvalidConfig(
                    "base intensity outside [0, 1]".into(),
                ));
            }
            let positive = match p.shape {
                Shape::GroundPlane { .. } => true,
                Shape::Box {
                    half_extents: h, ..
                } => h.x > 0.0 && h.y > 0.0 && h.z > 0.0,
                Shape::Cylinder { radius, height, .. } => radius > 0.0 && height > 0.0,
                Shape::Sphere { radius, .. } => radius > 0.0,
            };
            if !positive {
                return Err(CoreError::InvalidConfig(
                    "primitive extents must be positive".into(),
                ));
            }
        }
        Ok(Self { primitives, bounds })
    }

    /// Whether `x` lies inside any solid (the ground counts as solid below it).
    pub fn true_occupancy(&self, x: Vec3) -> bool {
        self.primitives.iter().any(|p| p.shape.contains(x))
    }

    /// Nearest primitive hit within `max_range`. Exact ties are resolved by
    /// class id and then base intensity so the answer does not depend on the
    /// order of the primitive list.
    pub fn nearest_hit(&self, origin: Vec3, dir: Vec3, max_range: f64) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            let Some(t) = p.shape.intersect(origin, dir) else {
                continue;
            };
            if t > max_range {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let q = &self.primitives[b.primitive];
                    t.total_cmp(&b.distance)
                        .then(p.class_id.cmp(&q.class_id))
                        .then(p.base_intensity.total_cmp(&q.base_intensity))
                        .is_lt()
                }
            };
            if better {
                best = Some(RayHit {
                    distance: t,
                    primitive: i,
                });
            }
        }
        best
    }
}

/// Parameters of the random scene generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    /// Objects are centered within `[-half_extent, half_extent]²` around the
    /// sensor's horizontal position.
    pub half_extent: f64,
    pub ground_height: f64,
    pub n_boxes: usize,
    pub n_cylinders: usize,
    pub n_spheres: usize,
    /// Range of box half-extents along x/y, and of half-heights.
    pub box_half_size: (f64, f64),
    pub box_half_height: (f64, f64),
    pub cylinder_radius: (f64, f64),
    pub cylinder_height: (f64, f64),
    pub sphere_radius: (f64, f64),
    /// Minimum distance between the sensor and any object surface.
    pub sensor_clearance: f64,
    pub sensor_origin: Vec3,
    /// Class id per kind, indexed by [`PrimitiveKind::index`].
    pub class_ids: [u32; 4],
    /// Base-intensity range per kind, indexed by [`PrimitiveKind::index`].
    pub intensity_ranges: [(f64, f64); 4],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            half_extent: 20.0,
            ground_height: 0.0,
            n_boxes: 6,
            n_cylinders: 6,
            n_spheres: 4,
            box_half_size: (0.5, 2.0),
            box_half_height: (0.4, 1.2),
            cylinder_radius: (0.15, 0.5),
            cylinder_height: (1.0, 4.0),
            sphere_radius: (0.4, 1.2),
            sensor_clearance: 1.5,
            sensor_origin: Vec3::new(0.0, 0.0, 1.8),
            class_ids: [0, 1, 2, 3],
            intensity_ranges: [(0.13, 0.17), (0.43, 0.47), (0.68, 0.72), (0.88, 0.92)],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |m: &str| Err(CoreError::InvalidConfig(m.into()));
        if !(self.half_extent > 0.0) {
            return bad("scene half extent must be positive");
        }
        for (name, (lo, hi)) in [
            ("box half size", self.box_half_size),
            ("box half height", self.box_half_height),
            ("cylinder radius", self.cylinder_radius),
            ("cylinder height", self.cylinder_height),
            ("sphere radius", self.sphere_radius),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(CoreError::InvalidConfig(format!(
                    "{name} range must be positive and ordered"
                )));
            }
        }
        for (lo, hi) in self.intensity_ranges {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad("intensity ranges must lie in [0, 1]");
            }
        }
        if self.sensor_origin.z <= self.ground_height {
            return bad("sensor must be above the ground");
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Deterministic random scene: one ground plane plus boxes, cylinders and
/// spheres resting on it, none of them closer than `sensor_clearance` to the
/// sensor.
pub fn sample_scene(config: &SceneConfig, seed: u64) -> Result<Scene, CoreError> {
    config.validate()?;
    let g = config.ground_height;
    let mut rng = keyed_rng(seed, Stream::Scene, 0);
    let intensity = |rng: &mut rand_chacha::ChaCha8Rng, kind: PrimitiveKind| {
        uniform(rng, config.intensity_ranges[kind.index()])
    };

    let ground_intensity = intensity(&mut rng, PrimitiveKind::GroundPlane);
    let mut primitives = vec![Primitive {
        shape: Shape::GroundPlane { height: g },
        class_id: config.class_ids[PrimitiveKind::GroundPlane.index()],
        base_intensity: ground_intensity,
    }];

    let center = config.sensor_origin;
    let he = config.half_extent;
    let plan = std::iter::repeat_n(PrimitiveKind::Box, config.n_boxes)
        .chain(std::iter::repeat_n(
            PrimitiveKind::Cylinder,
            config.n_cylinders,
        ))
        .chain(std::iter::repeat_n(PrimitiveKind::Sphere, config.n_spheres));
    for kind in plan {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let x = center.x + uniform(&mut rng, (-he, he));
            let y = center.y + uniform(&mut rng, (-he, he));
            let shape = match kind {
                PrimitiveKind::Box => {
                    let hz = uniform(&mut rng, config.box_half_height);
                    Shape::Box {
                        center: Vec3::new(x, y, g + hz),
                        half_extents: Vec3::new(
                            uniform(&mut rng, config.box_half_size),
                            uniform(&mut rng, config.box_half_size),
                            hz,
                        ),
                        yaw: uniform(&mut rng, (0.0, std::f64::consts::PI)),
                    }
                }
                PrimitiveKind::Cylinder => Shape::Cylinder {
                    base: Vec3::new(x, y, g),
                    radius: uniform(&mut rng, config.cylinder_radius),
                    height: uniform(&mut rng, config.cylinder_height),
                },
                PrimitiveKind::Sphere => {
                    let r = uniform(&mut rng, config.sphere_radius);
                    Shape::Sphere {
                        center: Vec3::new(x, y, g + r),
                        radius: r,
                    }
                }
                PrimitiveKind::GroundPlane => unreachable!("only one ground plane per scene"),
            };
            if shape.signed_distance(config.sensor_origin) > config.sensor_clearance {
                placed = Some(shape);
                break;
            }
        }
        let shape = placed.ok_or(CoreError::Placement {
            tries: MAX_PLACEMENT_TRIES,
        })?;
        primitives.push(Primitive {
            shape,
            class_id: config.class_ids[kind.index()],
            base_intensity: intensity(&mut rng, kind),
        });
    }

    let bounds = Aabb {
        min: Vec3::new(center.x - he, center.y - he, g - 1.0),
        max: Vec3::new(center.x + he, center.y + he, g + 10.0),
    };
    Scene::new(primitives, bounds)
}

/// Seed of scene `index` in the stream rooted at `seed`.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    derive_seed(seed, Stream::Scene, index)
}

/// Rotating multi-beam lidar.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorModel {
    pub n_azimuth: usize,
    /// Beam elevations in radians, strictly increasing.
    pub elevation_angles: Vec<f64>,
    pub max_range: f64,
    pub origin: Vec3,
    pub range_noise_sigma: f64,
    pub intensity_noise_sigma: f64,
}

impl Default for SensorModel {
    /// 32 channels spanning [-25°, +5°], 1024 steps per revolution, 60 m.
    fn default() -> Self {
        Self::with_channels(32, -25.0, 5.0, 1024)
    }
}

impl SensorModel {
    /// Evenly spaced channels between two elevations given in degrees.
    pub fn with_channels(
        channels: usize,
        lowest_deg: f64,
        highest_deg: f64,
        n_azimuth: usize,
    ) -> Self {
        let elevation_angles = (0..channels)
            .map(|i| {
                let f = if channels == 1 {
                    0.0
                } else {
                    i as f64 / (channels - 1) as f64
                };
                (lowest_deg + f * (highest_deg - lowest_deg)).to_radians()
            })
            .collect();
        Self {
            n_azimuth,
            elevation_angles,
            max_range: 60.0,
            origin: Vec3::new(0.0, 0.0, 1.8),
            range_noise_sigma: 0.01,
            intensity_noise_sigma: 0.03,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.range_noise_sigma = 0.0;
        self.intensity_noise_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |m: &str| Err(CoreError::InvalidConfig(m.into()));
        if self.n_azimuth == 0 || self.elevation_angles.is_empty() {
            return bad("sensor needs at least one azimuth step and one channel");
        }
        if !self.elevation_angles.windows(2).all(|w| w[0] < w[1]) {
            return bad("elevation angles must be strictly increasing");
        }
        if !(self.max_range > 0.0) {
            return bad("max range must be positive");
        }
        if !(self.range_noise_sigma >= 0.0 && self.intensity_noise_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        Ok(())
    }

    pub fn n_rays(&self) -> usize {
        self.n_azimuth * self.elevation_angles.len()
    }

    /// Unit direction of ray `index` (channel-major: `channel * n_azimuth + step`).
    pub fn ray_direction(&self, index: usize) -> Vec3 {
        let (channel, step) = (index / self.n_azimuth, index % self.n_azimuth);
        let el = self.elevation_angles[channel];
        let az = std::f64::consts::TAU * step as f64 / self.n_azimuth as f64;
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

/// Ray-casts every beam of `sensor` against `scene`.
///
/// Range and intensity noise for ray `i` come from the stream keyed by
/// `(seed, i)`, so parallel and serial casts agree bit for bit.
pub fn cast_scan(scene: &Scene, sensor: &SensorModel, seed: u64) -> Result<PointCloud, CoreError> {
    sensor.validate()?;
    let returns: Vec<Option<(Vec3, f64, u32)>> = (0..sensor.n_rays())
        .into_par_iter()
        .map(|i| {
            let dir = sensor.ray_direction(i);
            let hit = scene.nearest_hit(sensor.origin, dir, sensor.max_range)?;
            let prim = &scene.primitives[hit.primitive];
            let mut rng = keyed_rng(seed, Stream::Ray, i as u64);
            let range_noise: f64 = rng.sample(StandardNormal);
            let intensity_noise: f64 = rng.sample(StandardNormal);
            let mut t = hit.distance;
            if sensor.range_noise_sigma > 0.0 {
                t = (t + sensor.range_noise_sigma * range_noise)
                    .clamp(2.0 * EPS_GEOM, sensor.max_range);
            }
            let mut intensity = prim.base_intensity;
            if sensor.intensity_noise_sigma > 0.0 {
                intensity =
                    (intensity + sensor.intensity_noise_sigma * intensity_noise).clamp(0.0, 1.0);
            }
            Some((sensor.origin + dir * t, intensity, prim.class_id))
        })
        .collect();

    let n = returns.iter().flatten().count();
    if n == 0 {
        return Err(CoreError::NoReturns);
    }
    let mut points = Vec::with_capacity(n);
    let mut intensities = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (p, i, l) in returns.into_iter().flatten() {
        points.push(p);
        intensities.push(i);
        labels.push(l);
    }
    PointCloud::new(sensor.origin, points, Some(intensities), Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ground_only() -> Scene {
        let bounds = Aabb {
            min: Vec3::new(-10.0, -10.0, -1.0),
            max: Vec3::new(10.0, 10.0, 5.0),
        };
        Scene::new(
            vec![Primitive {
                shape: Shape::GroundPlane { height: 0.0 },
                class_id: 0,
                base_intensity: 0.15,
            }],
            bounds,
        )
        .unwrap()
    }

    fn single_ray_sensor(origin: Vec3, elevation: f64) -> SensorModel {
        SensorModel {
            n_azimuth: 1,
            elevation_angles: vec![elevation],
            max_range: 60.0,
            origin,
            range_noise_sigma: 0.0,
            intensity_noise_sigma: 0.0,
        }
    }

    #[test]
    fn straight_down_hits_ground() {
        let sensor = single_ray_sensor(Vec3::new(0.0, 0.0, 2.0), -std::f64::consts::FRAC_PI_2);
        let cloud = cast_scan(&ground_only(), &sensor, 1).unwrap();
        assert_eq!(cloud.len(), 1);
        assert!(cloud.points()[0].distance(Vec3::ZERO) < 1e-12);
        assert_eq!(cloud.labels().unwrap(), &[0]);
        assert_eq!(cloud.intensities().unwrap(), &[0.15]);
    }

    #[test]
    fn horizontal_ray_hits_sphere() {
        let mut scene = ground_only();
        scene.primitives.push(Primitive {
            shape: Shape::Sphere {
                center: Vec3::new(5.0, 0.0, 2.0),
                radius: 1.0,
            },
            class_id: 3,
            base_intensity: 0.9,
        });
        let sensor = single_ray_sensor(Vec3::new(0.0, 0.0, 2.0), 0.0);
        let cloud = cast_scan(&scene, &sensor, 1).unwrap();
        assert!(cloud.points()[0].distance(Vec3::new(4.0, 0.0, 2.0)) < 1e-12);
        assert_eq!(cloud.labels().unwrap(), &[3]);
    }

    #[test]
    fn no_returns_is_an_error() {
        let sensor = single_ray_sensor(Vec3::new(0.0, 0.0, 2.0), 0.3);
        assert_eq!(
            cast_scan(&ground_only(), &sensor, 1),
            Err(CoreError::NoReturns)
        );
    }

    #[test]
    fn empty_extras_gives_ground_only() {
        let config = SceneConfig {
            n_boxes: 0,
            n_cylinders: 0,
            n_spheres: 0,
            ..SceneConfig::default()
        };
        let scene = sample_scene(&config, 3).unwrap();
        assert_eq!(scene.primitives.len(), 1);
        assert_eq!(scene.primitives[0].kind(), PrimitiveKind::GroundPlane);
    }

    #[test]
    fn scenes_are_deterministic() {
        let config = SceneConfig::default();
        assert_eq!(
            sample_scene(&config, 11).unwrap(),
            sample_scene(&config, 11).unwrap()
        );
        assert_ne!(
            sample_scene(&config, 11).unwrap(),
            sample_scene(&config, 12).unwrap()
        );
    }

    #[test]
    fn impossible_placement_fails() {
        let config = SceneConfig {
            half_extent: 0.5,
            sensor_clearance: 5.0,
            ..SceneConfig::default()
        };
        assert!(matches!(
            sample_scene(&config, 1),
            Err(CoreError::Placement { .. })
        ));
    }

    #[test]
    fn occupancy_of_simple_locations() {
        let mut scene = ground_only();
        scene.primitives.push(Primitive {
            shape: Shape::Box {
                center: Vec3::new(3.0, 3.0, 1.0),
                half_extents: Vec3::new(1.0, 0.5, 1.0),
                yaw: 0.7,
            },
            class_id: 1,
            base_intensity: 0.45,
        });
        assert!(!scene.true_occupancy(Vec3::new(-5.0, -5.0, 1.0)));
        assert!(scene.true_occupancy(Vec3::new(3.0, 3.0, 1.0)));
        assert!(scene.true_occupancy(Vec3::new(-5.0, -5.0, -0.1)));
    }

    #[test]
    fn intersections_land_on_surfaces() {
        let shapes = [
            Shape::Box {
                center: Vec3::new(6.0, 1.0, 1.0),
                half_extents: Vec3::new(1.0, 2.0, 1.0),
                yaw: 0.4,
            },
            Shape::Cylinder {
                base: Vec3::new(5.0, -1.0, 0.0),
                radius: 0.5,
                height: 3.0,
            },
            Shape::Sphere {
                center: Vec3::new(7.0, 0.5, 1.5),
                radius: 1.2,
            },
        ];
        let origin = Vec3::new(0.0, 0.0, 1.8);
        for shape in shapes {
            let mut hits = 0;
            for k in 0..400 {
                let az = -0.6 + 1.2 * k as f64 / 400.0;
                let el = -0.3 + 0.5 * ((k * 37) % 400) as f64 / 400.0;
                let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                if let Some(t) = shape.intersect(origin, dir) {
                    hits += 1;
                    let p = origin + dir * t;
                    assert!(shape.signed_distance(p).abs() < 1e-9, "{shape:?} at {p:?}");
                    assert!(!shape.contains(origin + dir * (t * (1.0 - 1e-6))));
                }
            }
            assert!(hits > 0, "{shape:?} never hit");
        }
    }

    #[test]
    fn default_sensor_shape() {
        let s = SensorModel::default();
        assert_eq!(s.elevation_angles.len(), 32);
        assert!((s.elevation_angles[0] - (-25f64).to_radians()).abs() < 1e-15);
        assert!((s.elevation_angles[31] - 5f64.to_radians()).abs() < 1e-15);
        assert_eq!(s.n_rays(), 32 * 1024);
        s.validate().unwrap();
    }
}
