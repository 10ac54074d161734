//! Subcommand bodies. Each one reads the run configuration and its input
//! files and writes everything under `output_dir/<command>/`, with a manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use rand::Rng;
use visocc_core::queries::QueryMeta;
use visocc_core::rng::{derive_seed, keyed_rng, Stream};
use visocc_core::{QueryKind, QuerySet, Vec3};
use visocc_model::Model;
use visocc_train::data::{make_frame, simulate_scans};
use visocc_train::eval::{held_out_frames, occupancy_metrics, score_queries};
use visocc_train::{
    ablation_harness, pretrain_with, probe, separability_probes, threshold_sweep, Frame,
    MetricsReport, PretrainOutcome, Scan, Snapshot, TrainError,
};

use crate::config::{RunConfig, Split};
use crate::formats::{self, FormatError, PlyVertex};

pub fn scans_dir(config: &RunConfig, split: Split) -> PathBuf {
    config.output_dir.join("scans").join(split.dir_name())
}

pub fn queries_dir(config: &RunConfig, split: Split) -> PathBuf {
    config.output_dir.join("queries").join(split.dir_name())
}

/// Removes stale files of an earlier run so the manifest lists this run only.
fn fresh_dir(dir: &Path) -> anyhow::Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    formats::write_file(path, text.as_bytes())
}

/// Simulates one split and writes its scans; returns the directory.
pub fn simulate(config: &RunConfig, split: Split) -> anyhow::Result<PathBuf> {
    let data = config.data_config()?;
    let scans = simulate_scans(&data, config.split(split), config.max_points)?;
    let dir = scans_dir(config, split);
    fresh_dir(&dir)?;
    for scan in &scans {
        formats::write_scan(&dir, scan)?;
    }
    formats::write_manifest(&dir)?;
    info!("{} scans written to {}", scans.len(), dir.display());
    Ok(dir)
}

/// Generates the visibility queries of every scan of a simulated split.
pub fn make_queries(config: &RunConfig, split: Split) -> anyhow::Result<PathBuf> {
    let scans = formats::read_scan_dir(&scans_dir(config, split))?;
    if scans.is_empty() {
        bail!(FormatError::Malformed {
            what: "scan directory",
            detail: format!("no scans in {}", scans_dir(config, split).display())
        });
    }
    let dir = queries_dir(config, split);
    fresh_dir(&dir)?;
    for scan in &scans {
        let frame = make_frame(scan, config.seed, config.delta, config.offset_mode);
        formats::write_file(
            &dir.join(format!("{}.qry", formats::scan_stem(scan.index))),
            &formats::encode_queries(&frame.queries),
        )?;
    }
    formats::write_manifest(&dir)?;
    info!("{} query sets written to {}", scans.len(), dir.display());
    Ok(dir)
}

/// Pretraining frames read from the scan and query files of the pretrain split.
pub fn frames_from_files(config: &RunConfig) -> anyhow::Result<Vec<Frame>> {
    let scans = formats::read_scan_dir(&scans_dir(config, Split::Pretrain))?;
    let qdir = queries_dir(config, Split::Pretrain);
    scans
        .into_iter()
        .map(|scan| {
            let path = qdir.join(format!("{}.qry", formats::scan_stem(scan.index)));
            let queries = formats::decode_queries(&formats::read_file(&path)?)?;
            Ok(Frame {
                index: scan.index,
                cloud: scan.cloud,
                queries,
            })
        })
        .collect()
}

/// The same frames, produced without touching the filesystem.
pub fn frames_in_process(config: &RunConfig) -> anyhow::Result<Vec<Frame>> {
    let data = config.data_config()?;
    let scans = simulate_scans(&data, config.split(Split::Pretrain), config.max_points)?;
    Ok(visocc_train::data::make_frames(
        &scans,
        config.seed,
        config.delta,
        config.offset_mode,
    ))
}

pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const NON_FINITE_DUMP: &str = "non_finite_state.ckpt";

/// Pretrains on `frames` and writes checkpoints and metrics.
pub fn pretrain_frames(config: &RunConfig, frames: &[Frame]) -> anyhow::Result<PretrainOutcome> {
    let pc = config.pretrain_config();
    let dir = config.output_dir.join("pretrain");
    fresh_dir(&dir)?;
    let result = pretrain_with(&pc, frames, |epoch, model, optimizer| {
        let done = epoch + 1;
        if pc.checkpoint_every > 0 && done % pc.checkpoint_every == 0 && done < pc.epochs {
            let path = dir
                .join("checkpoints")
                .join(format!("epoch_{done:04}.ckpt"));
            formats::write_file(&path, &formats::encode_checkpoint(model, optimizer))
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::NonFinite {
            epoch,
            step,
            snapshot,
        }) => {
            formats::write_file(
                &dir.join(NON_FINITE_DUMP),
                &formats::encode_checkpoint(&snapshot.model, &snapshot.optimizer),
            )?;
            formats::write_manifest(&dir)?;
            return Err(TrainError::NonFinite {
                epoch,
                step,
                snapshot,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    formats::write_file(
        &dir.join(FINAL_CHECKPOINT),
        &formats::encode_checkpoint(&outcome.model, &outcome.optimizer),
    )?;
    write_text(&dir.join("metrics.json"), &outcome.report.to_json())?;
    write_text(&dir.join("metrics.csv"), &outcome.report.to_csv())?;
    write_text(&dir.join("curves.csv"), &outcome.report.curves_csv())?;
    formats::write_manifest(&dir)?;
    Ok(outcome)
}

pub fn pretrain(config: &RunConfig, in_process: bool) -> anyhow::Result<PretrainOutcome> {
    let frames = if in_process {
        frames_in_process(config)?
    } else {
        frames_from_files(config)?
    };
    pretrain_frames(config, &frames)
}

/// Loads a checkpoint that must match the configured architecture.
pub fn load_checkpoint(config: &RunConfig, path: &Path) -> anyhow::Result<Snapshot> {
    Ok(formats::decode_checkpoint_for(
        &formats::read_file(path)?,
        &config.model_config(),
    )?)
}

/// Config echo of a report. The output directory is left out so that metric
/// files do not depend on where they are written.
fn report_config(config: &RunConfig) -> BTreeMap<String, String> {
    config
        .entries()
        .into_iter()
        .filter(|(k, _, _)| *k != "output_dir")
        .map(|(k, v, _)| (k.to_string(), v))
        .collect()
}

fn finish_report(dir: &Path, report: &MetricsReport) -> anyhow::Result<()> {
    write_text(&dir.join("metrics.json"), &report.to_json())?;
    write_text(&dir.join("metrics.csv"), &report.to_csv())?;
    formats::write_manifest(&dir)?;
    Ok(())
}

pub const SWEEP_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Occupancy accuracy of a checkpoint on the held-out split.
pub fn eval_occ(config: &RunConfig, checkpoint: &Path) -> anyhow::Result<MetricsReport> {
    let snapshot = load_checkpoint(config, checkpoint)?;
    let frames = held_out_frames(
        &config.data_config()?,
        config.split(Split::HeldOut),
        config.max_points,
        config.eval_max_queries,
        config.delta,
        config.offset_mode,
    )?;
    let scores = score_queries(&snapshot.model, &frames)?;
    let mut report = MetricsReport::new("eval-occ", config.seed, report_config(config));
    report.occupancy = Some(occupancy_metrics(&scores, config.eval_threshold));
    let dir = config.output_dir.join("eval-occ");
    fresh_dir(&dir)?;
    let mut sweep = String::from("threshold,accuracy,precision,recall\n");
    for (t, m) in threshold_sweep(&scores, &SWEEP_THRESHOLDS) {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        writeln!(
            sweep,
            "{t},{},{},{}",
            m.accuracy,
            opt(m.precision),
            opt(m.recall)
        )
        .unwrap();
    }
    write_text(&dir.join("sweep.csv"), &sweep)?;
    finish_report(&dir, &report)?;
    Ok(report)
}

fn probe_clouds(config: &RunConfig, split: Split) -> anyhow::Result<Vec<visocc_core::PointCloud>> {
    let scans = simulate_scans(
        &config.data_config()?,
        config.split(split),
        config.max_points,
    )?;
    Ok(scans.into_iter().map(|s| s.cloud).collect())
}

/// Semantic probe of a checkpoint's encoder, or of a fresh one when `checkpoint` is `None`.
pub fn run_probe(config: &RunConfig, checkpoint: Option<&Path>) -> anyhow::Result<MetricsReport> {
    let model = match checkpoint {
        Some(p) => load_checkpoint(config, p)?.model,
        None => Model::<f32>::init(config.model_config(), config.seed),
    };
    let train = probe_clouds(config, Split::ProbeTrain)?;
    let eval = probe_clouds(config, Split::ProbeEval)?;
    let classes = config.data_config()?.classes();
    let metrics = probe(
        &model.encoder,
        config.use_intensity,
        &config.probe_config(),
        &train,
        &eval,
        &classes,
    )?;
    let name = if checkpoint.is_some() {
        "probe"
    } else {
        "probe-random-init"
    };
    let mut report = MetricsReport::new(name, config.seed, report_config(config));
    report.probe = Some(metrics);
    let dir = config.output_dir.join(name);
    fresh_dir(&dir)?;
    finish_report(&dir, &report)?;
    Ok(report)
}

/// Binary separability probes of a checkpoint's latents against a fresh encoder.
pub fn separability(config: &RunConfig, checkpoint: &Path) -> anyhow::Result<MetricsReport> {
    let trained = load_checkpoint(config, checkpoint)?.model;
    let random = Model::<f32>::init(config.model_config(), config.seed);
    let train = probe_clouds(config, Split::ProbeTrain)?;
    let eval = probe_clouds(config, Split::ProbeEval)?;
    let metrics = separability_probes(
        &trained.encoder,
        &random.encoder,
        config.use_intensity,
        &config.probe_config(),
        &train,
        &eval,
        config.class_ground,
    )?;
    let mut report = MetricsReport::new("separability", config.seed, report_config(config));
    report.separability = Some(metrics);
    let dir = config.output_dir.join("separability");
    fresh_dir(&dir)?;
    finish_report(&dir, &report)?;
    Ok(report)
}

/// Sweeps the configured ablation axis and writes the table.
pub fn ablate(config: &RunConfig) -> anyhow::Result<visocc_train::AblationTable> {
    let table = ablation_harness(
        config.ablation_setup()?,
        config.ablate_axis,
        &config.ablation_values()?,
    )?;
    let dir = config.output_dir.join("ablate");
    fresh_dir(&dir)?;
    let stem = config.ablate_axis.name();
    write_text(&dir.join(format!("{stem}.txt")), &table.to_text())?;
    write_text(&dir.join(format!("{stem}.csv")), &table.to_csv())?;
    let mut json = serde_json::to_string_pretty(&table)?;
    json.push('\n');
    write_text(&dir.join(format!("{stem}.json")), &json)?;
    formats::write_manifest(&dir)?;
    Ok(table)
}

const PALETTE: [[u8; 3]; 8] = [
    [140, 140, 140],
    [230, 120, 40],
    [60, 160, 70],
    [70, 110, 220],
    [200, 60, 160],
    [220, 200, 50],
    [60, 200, 200],
    [150, 90, 60],
];

fn label_color(label: Option<u32>) -> [u8; 3] {
    label.map_or([255, 255, 255], |l| PALETTE[l as usize % PALETTE.len()])
}

/// Blue (empty) to red (occupied).
fn occupancy_color(p: f64) -> [u8; 3] {
    let p = p.clamp(0.0, 1.0);
    [
        (255.0 * p).round() as u8,
        40,
        (255.0 * (1.0 - p)).round() as u8,
    ]
}

/// Scan points colored by label plus occupancy samples around them colored by
/// predicted probability. Samples outside every support's radius get −1.
pub fn export_vertices(
    config: &RunConfig,
    model: &Model<f32>,
    scan: &Scan,
) -> anyhow::Result<Vec<PlyVertex>> {
    let cloud = &scan.cloud;
    if cloud.is_empty() {
        bail!(FormatError::EmptyScan);
    }
    let mut rng = keyed_rng(config.seed, Stream::Export, scan.index);
    let r = config.radius;
    let mut queries = QuerySet::empty(QueryMeta {
        delta: 0.0,
        mode: config.offset_mode,
        seed: derive_seed(config.seed, Stream::Export, scan.index),
    });
    for _ in 0..config.occupancy_samples {
        let j = rng.random_range(0..cloud.len());
        let p = cloud.points()[j];
        let offset = Vec3::new(
            rng.random_range(-r..=r),
            rng.random_range(-r..=r),
            rng.random_range(-r..=r),
        );
        queries
            .positions
            .push(Vec3::new(p.x + offset.x, p.y + offset.y, p.z + offset.z).to_f32_precision());
        queries.occupancy.push(false);
        queries.intensity_target.push(None);
        queries.kind.push(QueryKind::Sight);
        queries.source_index.push(j);
    }
    let prepared = model.prepare(cloud, &queries);
    let probs = model.query_occupancy(&prepared, queries.len())?;
    let mut vertices: Vec<PlyVertex> = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, &position)| PlyVertex {
            position,
            color: label_color(cloud.labels().map(|l| l[i])),
            occupancy: -1.0,
            source: 0,
        })
        .collect();
    for (position, p) in queries.positions.iter().zip(probs) {
        vertices.push(PlyVertex {
            position: *position,
            color: p.map_or([255, 255, 255], occupancy_color),
            occupancy: p.map_or(-1.0, |p| p as f32),
            source: 1,
        });
    }
    Ok(vertices)
}

pub fn export_ply(
    config: &RunConfig,
    checkpoint: &Path,
    scan_path: &Path,
) -> anyhow::Result<PathBuf> {
    let model = load_checkpoint(config, checkpoint)?.model;
    let scan = formats::read_scan(scan_path)?;
    let vertices = export_vertices(config, &model, &scan)?;
    let dir = config.output_dir.join("export");
    let stem = scan_path
        .file_stem()
        .map_or_else(|| "scan".into(), |s| s.to_string_lossy().into_owned());
    let path = dir.join(format!("{stem}.ply"));
    write_text(&path, &formats::encode_ply(&vertices))?;
    formats::write_manifest(&dir)?;
    Ok(path)
}
