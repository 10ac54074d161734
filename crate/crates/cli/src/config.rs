//! Flat `key = value` run configuration.
//!
//! Grammar: one `key = value` per line, `#` starts a comment, blank lines
//! are ignored. Keys are dotted (`pretrain.epochs`). Unknown and repeated
//! keys are errors; absent keys keep their documented default.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use visocc_core::{OffsetMode, SceneConfig, SensorModel, Vec3};
use visocc_model::{Head, LossWeighting, ModelConfig, ObjectiveConfig, SupportMode};
use visocc_nn::loss::RegressionMetric;
use visocc_nn::AdamWConfig;
use visocc_train::data::{
    SceneRange, HELD_OUT_START, PRETRAIN_START, PROBE_EVAL_START, PROBE_TRAIN_START,
};
use visocc_train::probe::EPOCHS_PER_FRACTION;
use visocc_train::{
    AblationAxis, AblationSetup, AxisValue, DataConfig, PretrainConfig, ProbeConfig, ProbeMode,
};

#[derive(Debug, thiserror::Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

/// A value that can appear on the right of `=`.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(u32, u64, usize, f64, bool, String);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Option<Self> {
        (!s.is_empty()).then(|| PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for (f64, f64) {
    fn parse_value(s: &str) -> Option<Self> {
        let (a, b) = s.split_once(',')?;
        Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
    }
    fn render(&self) -> String {
        format!("{}, {}", self.0, self.1)
    }
}

impl ConfigValue for Vec<u64> {
    fn parse_value(s: &str) -> Option<Self> {
        s.split(',').map(|v| v.trim().parse().ok()).collect()
    }
    fn render(&self) -> String {
        self.iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

macro_rules! named_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                <$t>::parse(s)
            }
            fn render(&self) -> String {
                self.name().to_string()
            }
        }
    )*};
}

named_value!(
    OffsetMode,
    Head,
    LossWeighting,
    RegressionMetric,
    ProbeMode,
    AblationAxis
);

/// Encoder support layout: `points` or `bev` (pitch in `pretrain.bev_pitch`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupportKind {
    Points,
    Bev,
}

impl ConfigValue for SupportKind {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "points" => Some(SupportKind::Points),
            "bev" => Some(SupportKind::Bev),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            SupportKind::Points => "points",
            SupportKind::Bev => "bev",
        }
        .to_string()
    }
}

macro_rules! run_config {
    ($($key:literal => $field:ident : $ty:ty = $default:expr, $doc:literal;)*) => {
        /// Every configurable knob of a run.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $(#[doc = $doc] pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl RunConfig {
            /// `(key, rendered value, doc)` in canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String, &'static str)> {
                vec![$(($key, ConfigValue::render(&self.$field), $doc),)*]
            }

            fn set(&mut self, key: &str, value: &str) -> Option<Result<(), String>> {
                match key {
                    $($key => Some(match <$ty as ConfigValue>::parse_value(value) {
                        Some(v) => {
                            self.$field = v;
                            Ok(())
                        }
                        None => Err(format!("invalid value '{value}' for {key}")),
                    }),)*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    "seed" => seed: u64 = 0, "Root seed of scene generation, pretraining and probes.";
    "output_dir" => output_dir: PathBuf = PathBuf::from("visocc-out"), "Directory that receives every output.";

    "scene.half_extent" => scene_half_extent: f64 = 20.0, "Objects are placed within this distance (m) of the sensor along x and y.";
    "scene.ground_height" => scene_ground_height: f64 = 0.0, "Height of the ground plane (m).";
    "scene.n_boxes" => scene_n_boxes: usize = 6, "Boxes per scene.";
    "scene.n_cylinders" => scene_n_cylinders: usize = 6, "Upright cylinders per scene.";
    "scene.n_spheres" => scene_n_spheres: usize = 4, "Spheres per scene.";
    "scene.box_half_size" => scene_box_half_size: (f64, f64) = (0.5, 2.0), "Range of box half-extents along x and y (m).";
    "scene.box_half_height" => scene_box_half_height: (f64, f64) = (0.4, 1.2), "Range of box half-heights (m).";
    "scene.cylinder_radius" => scene_cylinder_radius: (f64, f64) = (0.15, 0.5), "Range of cylinder radii (m).";
    "scene.cylinder_height" => scene_cylinder_height: (f64, f64) = (1.0, 4.0), "Range of cylinder heights (m).";
    "scene.sphere_radius" => scene_sphere_radius: (f64, f64) = (0.4, 1.2), "Range of sphere radii (m).";
    "scene.sensor_clearance" => scene_sensor_clearance: f64 = 1.5, "Minimum distance between the sensor and any object (m).";
    "scene.class_ground" => class_ground: u32 = 0, "Label of ground points.";
    "scene.class_box" => class_box: u32 = 1, "Label of box points.";
    "scene.class_cylinder" => class_cylinder: u32 = 2, "Label of cylinder points.";
    "scene.class_sphere" => class_sphere: u32 = 3, "Label of sphere points.";
    "scene.intensity_ground" => intensity_ground: (f64, f64) = (0.13, 0.17), "Base intensity range of the ground.";
    "scene.intensity_box" => intensity_box: (f64, f64) = (0.43, 0.47), "Base intensity range of boxes.";
    "scene.intensity_cylinder" => intensity_cylinder: (f64, f64) = (0.68, 0.72), "Base intensity range of cylinders.";
    "scene.intensity_sphere" => intensity_sphere: (f64, f64) = (0.88, 0.92), "Base intensity range of spheres.";

    "sensor.channels" => sensor_channels: usize = 32, "Beams, evenly spaced between the lowest and highest elevation.";
    "sensor.lowest_deg" => sensor_lowest_deg: f64 = -25.0, "Elevation of the lowest beam (degrees).";
    "sensor.highest_deg" => sensor_highest_deg: f64 = 5.0, "Elevation of the highest beam (degrees).";
    "sensor.azimuth_steps" => sensor_azimuth_steps: usize = 1024, "Firings per revolution.";
    "sensor.max_range" => sensor_max_range: f64 = 60.0, "Maximum range (m).";
    "sensor.height" => sensor_height: f64 = 1.8, "Sensor height above the origin (m).";
    "sensor.range_noise" => sensor_range_noise: f64 = 0.01, "Standard deviation of range noise (m).";
    "sensor.intensity_noise" => sensor_intensity_noise: f64 = 0.03, "Standard deviation of intensity noise.";

    "data.pretrain_scenes" => pretrain_scenes: u64 = 256, "Scenes in the pretraining split.";
    "data.probe_train_scenes" => probe_train_scenes: u64 = 32, "Scenes in the labelled probe training split.";
    "data.probe_eval_scenes" => probe_eval_scenes: u64 = 16, "Scenes in the probe evaluation split.";
    "data.held_out_scenes" => held_out_scenes: u64 = 32, "Scenes in the held-out occupancy split.";

    "pretrain.epochs" => epochs: usize = 50, "Pretraining epochs.";
    "pretrain.batch_size" => batch_size: usize = 4, "Scenes per optimizer step.";
    "pretrain.max_points" => max_points: usize = 256, "Points kept per scan after downsampling.";
    "pretrain.max_queries" => max_queries: usize = 256, "Queries kept per scan and epoch.";
    "pretrain.delta" => delta: f64 = 0.1, "Offset (m) of empty and occupied queries along each ray.";
    "pretrain.offset_mode" => offset_mode: OffsetMode = OffsetMode::Uniform, "Query offsets: fixed at delta, or uniform in (0, delta].";
    "pretrain.k" => k: usize = 16, "Neighbors per support in the encoder.";
    "pretrain.radius" => radius: f64 = 1.0, "Decoding radius (m).";
    "pretrain.head" => head: Head = Head::PerPointBall, "Decoder head: per_point_ball, ball_avg or ball_max.";
    "pretrain.support" => support: SupportKind = SupportKind::Points, "Latent supports: points, or a bev grid.";
    "pretrain.bev_pitch" => bev_pitch: f64 = 0.5, "Grid pitch (m) when pretrain.support = bev.";
    "pretrain.use_intensity" => use_intensity: bool = true, "Feed intensity to the encoder.";
    "pretrain.lambda" => lambda: f64 = 1.0, "Weight of the intensity loss; 0 disables it.";
    "pretrain.intensity_metric" => intensity_metric: RegressionMetric = RegressionMetric::L1, "Intensity loss: l1 or l2.";
    "pretrain.loss_weighting" => loss_weighting: LossWeighting = LossWeighting::PerBall, "Loss weighting: per_ball or flat.";
    "pretrain.lr" => lr: f64 = 1e-3, "AdamW learning rate (constant during pretraining).";
    "pretrain.beta1" => beta1: f64 = 0.9, "AdamW beta1.";
    "pretrain.beta2" => beta2: f64 = 0.999, "AdamW beta2.";
    "pretrain.eps" => eps: f64 = 1e-8, "AdamW epsilon.";
    "pretrain.weight_decay" => weight_decay: f64 = 0.01, "AdamW decoupled weight decay.";
    "pretrain.augment_rotation" => augment_rotation: bool = true, "Random rotation about z.";
    "pretrain.augment_flips" => augment_flips: bool = true, "Random flips of x and y.";
    "pretrain.checkpoint_every" => checkpoint_every: usize = 0, "Epoch interval of intermediate checkpoints; 0 writes only the final one.";

    "eval.max_queries" => eval_max_queries: usize = 1024, "Queries kept per held-out scan.";
    "eval.threshold" => eval_threshold: f64 = 0.5, "A query is predicted occupied above this probability.";

    "probe.mode" => probe_mode: ProbeMode = ProbeMode::LinearProbe, "linear_probe (frozen encoder) or finetune.";
    "probe.epochs" => probe_epochs: usize = 100, "Probe epochs at label fraction 1; other fractions scale with the table below.";
    "probe.lr" => probe_lr: f64 = 1e-3, "Probe base learning rate (cosine annealed).";
    "probe.label_fraction" => label_fraction: f64 = 1.0, "Fraction of probe training scenes whose labels are used.";
    "probe.batch_size" => probe_batch_size: usize = 4, "Scenes per probe step.";
    "probe.weight_decay" => probe_weight_decay: f64 = 0.01, "Probe AdamW weight decay.";

    "ablate.axis" => ablate_axis: AblationAxis = AblationAxis::Radius, "Axis swept by the ablate command.";
    "ablate.values" => ablate_values: String = String::new(), "Comma-separated values; empty means the axis' reference values.";
    "ablate.seeds" => ablate_seeds: Vec<u64> = vec![0, 1, 2, 3, 4], "Seeds per ablation value.";

    "export.occupancy_samples" => occupancy_samples: usize = 2000, "Occupancy samples added to a PLY export.";
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::at(line_no, format!("expected 'key = value', found '{line}'"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::at(line_no, format!("duplicate key '{key}'")));
            }
            match config.set(key, value) {
                None => return Err(ConfigError::at(line_no, format!("unknown key '{key}'"))),
                Some(Err(e)) => return Err(ConfigError::at(line_no, e)),
                Some(Ok(())) => {}
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::formats::FormatError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(Self::parse(&text)?)
    }

    /// The documented configuration file for these values.
    pub fn render(&self) -> String {
        let mut out =
            String::from("# visocc run configuration: key = value, '#' starts a comment.\n");
        let mut section = "";
        for (key, value, doc) in self.entries() {
            let this = key.split_once('.').map_or("", |(s, _)| s);
            if this != section {
                section = this;
                writeln!(out).unwrap();
                if section == "probe" {
                    out.push_str(&self.epoch_table_comment());
                }
            }
            writeln!(out, "# {doc}\n{key} = {value}").unwrap();
        }
        out
    }

    fn epoch_table_comment(&self) -> String {
        let mut out =
            String::from("# Probe epochs per label fraction at the current probe.epochs:\n");
        for (fraction, _) in EPOCHS_PER_FRACTION {
            let probe = ProbeConfig {
                label_fraction: fraction,
                ..self.probe_config()
            };
            writeln!(
                out,
                "#   {:>6}% labels -> {} epochs",
                fraction * 100.0,
                probe.scheduled_epochs()
            )
            .unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.data_config()?;
        self.pretrain_config()
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()))?;
        self.probe_config()
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()))?;
        if self.pretrain_scenes == 0
            || self.probe_train_scenes == 0
            || self.probe_eval_scenes == 0
            || self.held_out_scenes == 0
        {
            return Err(ConfigError::new(
                "every data split needs at least one scene",
            ));
        }
        if self.ablate_seeds.is_empty() {
            return Err(ConfigError::new("ablate.seeds must list at least one seed"));
        }
        if !(0.0..=1.0).contains(&self.eval_threshold) {
            return Err(ConfigError::new("eval.threshold must lie in [0, 1]"));
        }
        self.ablation_values()?;
        Ok(())
    }

    pub fn data_config(&self) -> Result<DataConfig, ConfigError> {
        let origin = Vec3::new(0.0, 0.0, self.sensor_height);
        let scene = SceneConfig {
            half_extent: self.scene_half_extent,
            ground_height: self.scene_ground_height,
            n_boxes: self.scene_n_boxes,
            n_cylinders: self.scene_n_cylinders,
            n_spheres: self.scene_n_spheres,
            box_half_size: self.scene_box_half_size,
            box_half_height: self.scene_box_half_height,
            cylinder_radius: self.scene_cylinder_radius,
            cylinder_height: self.scene_cylinder_height,
            sphere_radius: self.scene_sphere_radius,
            sensor_clearance: self.scene_sensor_clearance,
            sensor_origin: origin,
            class_ids: [
                self.class_ground,
                self.class_box,
                self.class_cylinder,
                self.class_sphere,
            ],
            intensity_ranges: [
                self.intensity_ground,
                self.intensity_box,
                self.intensity_cylinder,
                self.intensity_sphere,
            ],
        };
        let mut sensor = SensorModel::with_channels(
            self.sensor_channels,
            self.sensor_lowest_deg,
            self.sensor_highest_deg,
            self.sensor_azimuth_steps,
        );
        sensor.max_range = self.sensor_max_range;
        sensor.origin = origin;
        sensor.range_noise_sigma = self.sensor_range_noise;
        sensor.intensity_noise_sigma = self.sensor_intensity_noise;
        scene
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()))?;
        sensor
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()))?;
        Ok(DataConfig {
            scene,
            sensor,
            seed: self.seed,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            k: self.k,
            radius: self.radius,
            head: self.head,
            support: match self.support {
                SupportKind::Points => SupportMode::Points,
                SupportKind::Bev => SupportMode::Bev {
                    pitch: self.bev_pitch,
                },
            },
            use_intensity: self.use_intensity,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            max_points: self.max_points,
            max_queries: self.max_queries,
            delta: self.delta,
            offset_mode: self.offset_mode,
            model: self.model_config(),
            objective: ObjectiveConfig {
                lambda: self.lambda,
                metric: self.intensity_metric,
                weighting: self.loss_weighting,
            },
            optimizer: AdamWConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
            augment_rotation: self.augment_rotation,
            augment_flips: self.augment_flips,
            checkpoint_every: self.checkpoint_every,
            seed: self.seed,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            mode: self.probe_mode,
            epochs: self.probe_epochs,
            base_lr: self.probe_lr,
            label_fraction: self.label_fraction,
            batch_size: self.probe_batch_size,
            weight_decay: self.probe_weight_decay,
            seed: self.seed,
        }
    }

    pub fn split(&self, split: Split) -> SceneRange {
        match split {
            Split::Pretrain => SceneRange::new(PRETRAIN_START, self.pretrain_scenes),
            Split::ProbeTrain => SceneRange::new(PROBE_TRAIN_START, self.probe_train_scenes),
            Split::ProbeEval => SceneRange::new(PROBE_EVAL_START, self.probe_eval_scenes),
            Split::HeldOut => SceneRange::new(HELD_OUT_START, self.held_out_scenes),
        }
    }

    pub fn ablation_values(&self) -> Result<Vec<AxisValue>, ConfigError> {
        if self.ablate_values.trim().is_empty() {
            return Ok(self.ablate_axis.reference_values());
        }
        self.ablate_values
            .split(',')
            .map(|v| {
                AxisValue::parse(self.ablate_axis, v.trim()).ok_or_else(|| {
                    ConfigError::new(format!(
                        "invalid {} value '{}'",
                        self.ablate_axis.name(),
                        v.trim()
                    ))
                })
            })
            .collect()
    }

    pub fn ablation_setup(&self) -> Result<AblationSetup, ConfigError> {
        Ok(AblationSetup {
            data: self.data_config()?,
            base: self.pretrain_config(),
            probe: self.probe_config(),
            pretrain_scenes: self.split(Split::Pretrain),
            probe_train: self.split(Split::ProbeTrain),
            probe_eval: self.split(Split::ProbeEval),
            seeds: self.ablate_seeds.clone(),
        })
    }
}

/// Disjoint scene-index ranges of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Pretrain,
    ProbeTrain,
    ProbeEval,
    HeldOut,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::Pretrain,
        Split::ProbeTrain,
        Split::ProbeEval,
        Split::HeldOut,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::ProbeTrain => "probe-train",
            Split::ProbeEval => "probe-eval",
            Split::HeldOut => "held-out",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendered_defaults_parse_back() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.render()).unwrap(), d);
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(
            RunConfig::parse("# nothing\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        let e = RunConfig::parse("pretrain.epoch = 3").unwrap_err();
        assert_eq!(e.line, Some(1));
        assert!(e.message.contains("unknown key"));
        assert!(RunConfig::parse("seed = 1\nseed = 2")
            .unwrap_err()
            .message
            .contains("duplicate"));
        assert!(RunConfig::parse("seed 1").is_err());
        assert!(RunConfig::parse("pretrain.head = ball_median").is_err());
        assert!(RunConfig::parse("pretrain.epochs = 0").is_err());
    }

    #[test]
    fn values_reach_library_configs() {
        let c = RunConfig::parse("seed = 7 # trailing comment\npretrain.support = bev\npretrain.bev_pitch = 0.25\nsensor.height = 2")
            .unwrap();
        assert_eq!(c.pretrain_config().seed, 7);
        assert_eq!(c.model_config().support, SupportMode::Bev { pitch: 0.25 });
        let data = c.data_config().unwrap();
        assert_eq!(data.sensor.origin, data.scene.sensor_origin);
        assert_eq!(data.sensor.origin.z, 2.0);
    }
}
