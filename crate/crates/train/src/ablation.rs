//! Pretrain-then-probe sweeps over one configuration axis, several seeds per value.

use std::collections::BTreeMap;
use std::fmt::Write;

use log::info;
use serde::{Deserialize, Serialize};
use visocc_core::OffsetMode;
use visocc_model::{Head, LossWeighting, Model};

use crate::data::{
    assert_disjoint, make_frames, simulate_scans, DataConfig, Frame, Scan, SceneRange,
};
use crate::pretrain::{pretrain, PretrainConfig};
use crate::probe::{probe, ProbeConfig, ProbeMetrics};
use crate::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Radius,
    Delta,
    Intensity,
    Head,
    OffsetMode,
    LossWeighting,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Radius,
        AblationAxis::Delta,
        AblationAxis::Intensity,
        AblationAxis::Head,
        AblationAxis::OffsetMode,
        AblationAxis::LossWeighting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Radius => "radius",
            AblationAxis::Delta => "delta",
            AblationAxis::Intensity => "intensity",
            AblationAxis::Head => "head",
            AblationAxis::OffsetMode => "offset_mode",
            AblationAxis::LossWeighting => "loss_weighting",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Header of the value column.
    pub fn column(self) -> &'static str {
        match self {
            AblationAxis::Radius => "radius (m)",
            AblationAxis::Delta => "delta (m)",
            AblationAxis::Intensity => "intensity input | intensity loss",
            AblationAxis::Head => "decoder head",
            AblationAxis::OffsetMode => "offset mode",
            AblationAxis::LossWeighting => "loss weighting",
        }
    }

    /// The values of the reference tables: radius {0.5, 1, 2, 4}; delta
    /// {0.05, 0.1, 0.2, 0.4, 0.8}; intensity (neither, input only, input and loss).
    pub fn reference_values(self) -> Vec<AxisValue> {
        match self {
            AblationAxis::Radius => [0.5, 1.0, 2.0, 4.0]
                .into_iter()
                .map(AxisValue::Radius)
                .collect(),
            AblationAxis::Delta => [0.05, 0.1, 0.2, 0.4, 0.8]
                .into_iter()
                .map(AxisValue::Delta)
                .collect(),
            AblationAxis::Intensity => vec![
                AxisValue::Intensity {
                    input: false,
                    loss: false,
                },
                AxisValue::Intensity {
                    input: true,
                    loss: false,
                },
                AxisValue::Intensity {
                    input: true,
                    loss: true,
                },
            ],
            AblationAxis::Head => Head::ALL.into_iter().map(AxisValue::Head).collect(),
            AblationAxis::OffsetMode => [OffsetMode::Uniform, OffsetMode::Fixed]
                .into_iter()
                .map(AxisValue::OffsetMode)
                .collect(),
            AblationAxis::LossWeighting => [LossWeighting::PerBall, LossWeighting::Flat]
                .into_iter()
                .map(AxisValue::LossWeighting)
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisValue {
    Radius(f64),
    Delta(f64),
    Intensity { input: bool, loss: bool },
    Head(Head),
    OffsetMode(OffsetMode),
    LossWeighting(LossWeighting),
}

impl AxisValue {
    pub fn axis(&self) -> AblationAxis {
        match self {
            AxisValue::Radius(_) => AblationAxis::Radius,
            AxisValue::Delta(_) => AblationAxis::Delta,
            AxisValue::Intensity { .. } => AblationAxis::Intensity,
            AxisValue::Head(_) => AblationAxis::Head,
            AxisValue::OffsetMode(_) => AblationAxis::OffsetMode,
            AxisValue::LossWeighting(_) => AblationAxis::LossWeighting,
        }
    }

    pub fn label(&self) -> String {
        let mark = |b: bool| if b { "yes" } else { "no" };
        match *self {
            AxisValue::Radius(r) => r.to_string(),
            AxisValue::Delta(d) => d.to_string(),
            AxisValue::Intensity { input, loss } => format!("{} | {}", mark(input), mark(loss)),
            AxisValue::Head(h) => h.name().to_string(),
            AxisValue::OffsetMode(m) => m.name().to_string(),
            AxisValue::LossWeighting(w) => w.name().to_string(),
        }
    }

    /// Parses a value of `axis`; intensity values are `none`, `input` or `input+loss`.
    pub fn parse(axis: AblationAxis, s: &str) -> Option<Self> {
        let positive = |s: &str| s.parse::<f64>().ok().filter(|v| *v > 0.0 && v.is_finite());
        match axis {
            AblationAxis::Radius => positive(s).map(AxisValue::Radius),
            AblationAxis::Delta => positive(s).map(AxisValue::Delta),
            AblationAxis::Intensity => match s {
                "none" => Some(AxisValue::Intensity {
                    input: false,
                    loss: false,
                }),
                "input" => Some(AxisValue::Intensity {
                    input: true,
                    loss: false,
                }),
                "input+loss" => Some(AxisValue::Intensity {
                    input: true,
                    loss: true,
                }),
                _ => None,
            },
            AblationAxis::Head => Head::parse(s).map(AxisValue::Head),
            AblationAxis::OffsetMode => OffsetMode::parse(s).map(AxisValue::OffsetMode),
            AblationAxis::LossWeighting => LossWeighting::parse(s).map(AxisValue::LossWeighting),
        }
    }

    /// `base` with this value substituted. The intensity loss is switched off
    /// by setting its weight to zero; switching it on uses weight 1 unless the
    /// base already has a positive weight.
    pub fn apply(&self, base: &PretrainConfig) -> PretrainConfig {
        let mut c = base.clone();
        match *self {
            AxisValue::Radius(r) => c.model.radius = r,
            AxisValue::Delta(d) => c.delta = d,
            AxisValue::Intensity { input, loss } => {
                c.model.use_intensity = input;
                c.objective.lambda = match (loss, base.objective.lambda > 0.0) {
                    (false, _) => 0.0,
                    (true, true) => base.objective.lambda,
                    (true, false) => 1.0,
                };
            }
            AxisValue::Head(h) => c.model.head = h,
            AxisValue::OffsetMode(m) => c.offset_mode = m,
            AxisValue::LossWeighting(w) => c.objective.weighting = w,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSetup {
    pub data: DataConfig,
    pub base: PretrainConfig,
    pub probe: ProbeConfig,
    pub pretrain_scenes: SceneRange,
    pub probe_train: SceneRange,
    pub probe_eval: SceneRange,
    /// One pretrain + probe per seed and value; the seed drives both.
    pub seeds: Vec<u64>,
}

/// Probe results of one pretraining run and of its untrained initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub pretrained: ProbeMetrics,
    pub random_init: ProbeMetrics,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl AblationTable {
    /// `value | mean ± std` rows under a two-column header.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} | {} (mean ± std over {} seeds)\n",
            self.axis.column(),
            self.metric,
            self.seeds.len()
        );
        for r in &self.rows {
            writeln!(out, "{} | {:.2} ± {:.2}", r.value, r.mean, r.std).unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,mean,std");
        for s in &self.seeds {
            write!(out, ",seed_{s}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{},\"{}\",{},{}",
                self.axis.name(),
                r.value,
                r.mean,
                r.std
            )
            .unwrap();
            for v in &r.per_seed {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn row(&self, value: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.value == value)
    }
}

/// Simulated scans shared by every cell, and a memo of finished cells.
pub struct Harness {
    pub setup: AblationSetup,
    scans: Vec<Scan>,
    probe_train: Vec<visocc_core::PointCloud>,
    probe_eval: Vec<visocc_core::PointCloud>,
    frames: BTreeMap<String, Vec<Frame>>,
    cells: BTreeMap<String, CellResult>,
}

impl Harness {
    pub fn new(setup: AblationSetup) -> Result<Self> {
        assert_disjoint(&[
            ("pretraining", setup.pretrain_scenes),
            ("probe training", setup.probe_train),
            ("probe evaluation", setup.probe_eval),
        ])?;
        setup.base.validate()?;
        setup.probe.validate()?;
        if setup.seeds.is_empty() {
            return Err(TrainError::InvalidConfig(
                "ablation needs at least one seed".into(),
            ));
        }
        let n = setup.base.max_points;
        let scans = simulate_scans(&setup.data, setup.pretrain_scenes, n)?;
        let probe_train = simulate_scans(&setup.data, setup.probe_train, n)?
            .into_iter()
            .map(|s| s.cloud)
            .collect();
        let probe_eval = simulate_scans(&setup.data, setup.probe_eval, n)?
            .into_iter()
            .map(|s| s.cloud)
            .collect();
        Ok(Self {
            setup,
            scans,
            probe_train,
            probe_eval,
            frames: BTreeMap::new(),
            cells: BTreeMap::new(),
        })
    }

    fn frames_for(&mut self, config: &PretrainConfig) -> &[Frame] {
        let key = format!("{}/{}", config.delta, config.offset_mode.name());
        let (scans, seed) = (&self.scans, self.setup.data.seed);
        self.frames
            .entry(key)
            .or_insert_with(|| make_frames(scans, seed, config.delta, config.offset_mode))
    }

    /// Pretrains `config` with `seed`, then probes the result and its initialization.
    pub fn cell(&mut self, config: &PretrainConfig, seed: u64) -> Result<CellResult> {
        let config = PretrainConfig {
            seed,
            ..config.clone()
        };
        let key = format!("{config:?}");
        if let Some(c) = self.cells.get(&key) {
            return Ok(c.clone());
        }
        let frames = self.frames_for(&config).to_vec();
        let outcome = pretrain(&config, &frames)?;
        let probe_config = ProbeConfig {
            seed,
            ..self.setup.probe
        };
        let classes = self.setup.data.classes();
        let use_intensity = config.model.use_intensity;
        let pretrained = probe(
            &outcome.model.encoder,
            use_intensity,
            &probe_config,
            &self.probe_train,
            &self.probe_eval,
            &classes,
        )?;
        let init = Model::<f32>::init(config.model, seed);
        let random_init = probe(
            &init.encoder,
            use_intensity,
            &probe_config,
            &self.probe_train,
            &self.probe_eval,
            &classes,
        )?;
        let final_loss = outcome.report.epochs.last().map_or(f64::NAN, |e| e.loss);
        info!(
            "cell seed {seed}: probe mIoU {:.4} (random init {:.4}), final pretext loss {final_loss:.4}",
            pretrained.miou, random_init.miou
        );
        let result = CellResult {
            pretrained,
            random_init,
            final_loss,
        };
        self.cells.insert(key, result.clone());
        Ok(result)
    }

    /// One row per value: probe mIoU (%) of the pretrained encoder per seed.
    pub fn run(&mut self, axis: AblationAxis, values: &[AxisValue]) -> Result<AblationTable> {
        let mut rows = Vec::with_capacity(values.len());
        for v in values {
            if v.axis() != axis {
                return Err(TrainError::InvalidConfig(format!(
                    "value {} does not belong to axis {}",
                    v.label(),
                    axis.name()
                )));
            }
            let config = v.apply(&self.setup.base);
            config.validate()?;
            let mut per_seed = Vec::with_capacity(self.setup.seeds.len());
            for seed in self.setup.seeds.clone() {
                per_seed.push(100.0 * self.cell(&config, seed)?.pretrained.miou);
            }
            let (mean, std) = mean_std(&per_seed);
            rows.push(AblationRow {
                value: v.label(),
                per_seed,
                mean,
                std,
            });
        }
        Ok(AblationTable {
            axis,
            metric: "probe mIoU (%)".into(),
            seeds: self.setup.seeds.clone(),
            rows,
        })
    }
}

pub fn ablation_harness(
    setup: AblationSetup,
    axis: AblationAxis,
    values: &[AxisValue],
) -> Result<AblationTable> {
    Harness::new(setup)?.run(axis, values)
}
