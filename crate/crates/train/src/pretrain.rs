//! Pretext-task optimization: augment, subsample queries, decode, AdamW.

use std::collections::BTreeMap;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use visocc_core::geometry::augmentation_transform;
use visocc_core::rng::{derive_seed, Stream};
use visocc_core::{subsample_queries, OffsetMode};
use visocc_model::{
    objective_weights, LossParts, Model, ModelConfig, ModelError, ObjectiveConfig, PreparedScan,
    RowTargets, SupportMode,
};
use visocc_nn::{AdamWConfig, AdamWState, NnError};

use crate::data::{shuffled, Frame};
use crate::report::{EpochMetrics, MetricsReport};
use crate::{Result, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub max_points: usize,
    /// Queries kept per scan and epoch.
    pub max_queries: usize,
    pub delta: f64,
    pub offset_mode: OffsetMode,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub optimizer: AdamWConfig,
    pub augment_rotation: bool,
    pub augment_flips: bool,
    /// Epoch interval of the checkpoint hook; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            max_points: 256,
            max_queries: 256,
            delta: 0.1,
            offset_mode: OffsetMode::Uniform,
            model: ModelConfig::default(),
            objective: ObjectiveConfig::default(),
            optimizer: AdamWConfig::default(),
            augment_rotation: true,
            augment_flips: true,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.max_points == 0 || self.max_queries == 0
        {
            return bad("epochs, batch size, max points and max queries must be at least 1");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if !(self.objective.lambda >= 0.0 && self.objective.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && o.weight_decay >= 0.0)
        {
            return bad("optimizer hyperparameters out of range");
        }
        self.model.validate()?;
        Ok(())
    }

    /// Key/value echo for metric reports.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let support = match self.model.support {
            SupportMode::Points => "points".to_string(),
            SupportMode::Bev { pitch } => format!("bev:{pitch}"),
        };
        [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_points", self.max_points.to_string()),
            ("max_queries", self.max_queries.to_string()),
            ("delta", self.delta.to_string()),
            ("offset_mode", self.offset_mode.name().to_string()),
            ("k", self.model.k.to_string()),
            ("radius", self.model.radius.to_string()),
            ("head", self.model.head.name().to_string()),
            ("support", support),
            ("use_intensity", self.model.use_intensity.to_string()),
            ("lambda", self.objective.lambda.to_string()),
            ("intensity_metric", self.objective.metric.name().to_string()),
            (
                "loss_weighting",
                self.objective.weighting.name().to_string(),
            ),
            ("lr", self.optimizer.lr.to_string()),
            ("beta1", self.optimizer.beta1.to_string()),
            ("beta2", self.optimizer.beta2.to_string()),
            ("eps", self.optimizer.eps.to_string()),
            ("weight_decay", self.optimizer.weight_decay.to_string()),
            ("augment_rotation", self.augment_rotation.to_string()),
            ("augment_flips", self.augment_flips.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("pretrain.{k}"), v))
        .collect()
    }
}

/// Parameters plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub model: Model<f32>,
    pub optimizer: AdamWState<f32>,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: Model<f32>,
    pub optimizer: AdamWState<f32>,
    pub report: MetricsReport,
}

/// Key of the augmentation and query subset of one scene in one epoch.
fn epoch_key(epoch: usize, scene_index: u64) -> u64 {
    ((epoch as u64) << 32) | (scene_index & 0xffff_ffff)
}

fn non_finite(
    epoch: usize,
    step: usize,
    model: &Model<f32>,
    optimizer: &AdamWState<f32>,
) -> TrainError {
    TrainError::NonFinite {
        epoch,
        step,
        snapshot: Box::new(Snapshot {
            model: model.clone(),
            optimizer: optimizer.clone(),
        }),
    }
}

pub fn pretrain(config: &PretrainConfig, frames: &[Frame]) -> Result<PretrainOutcome> {
    pretrain_with(config, frames, |_, _, _| Ok(()))
}

/// Pretrains from `frames`, calling `on_epoch(epoch, model, optimizer)` after
/// every epoch.
///
/// Per step, each scene of the batch is augmented and its queries subsampled
/// with keys `(seed, epoch, scene index)`; gradients of the scenes are computed
/// independently and summed in batch order, so results do not depend on the
/// number of threads.
pub fn pretrain_with(
    config: &PretrainConfig,
    frames: &[Frame],
    mut on_epoch: impl FnMut(usize, &Model<f32>, &AdamWState<f32>) -> Result<()>,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if frames.is_empty() {
        return Err(TrainError::InvalidConfig("no pretraining scenes".into()));
    }
    for f in frames {
        let m = f.queries.meta;
        if m.delta != config.delta || m.mode != config.offset_mode {
            return Err(TrainError::InvalidConfig(format!(
                "scene {} has queries for delta {} / {}, config asks for {} / {}",
                f.index,
                m.delta,
                m.mode.name(),
                config.delta,
                config.offset_mode.name()
            )));
        }
    }
    let start = Instant::now();
    let mut model = Model::<f32>::init(config.model, config.seed);
    let mut optimizer = AdamWState::new(config.optimizer);
    let mut report = MetricsReport::new("pretrain", config.seed, config.echo());
    let lr = config.optimizer.lr;
    let mut step = 0;

    for epoch in 0..config.epochs {
        let order = shuffled(frames.len(), config.seed, Stream::Shuffle, epoch as u64);
        let mut sum = LossParts::default();
        let mut steps = 0;
        for batch in order.chunks(config.batch_size) {
            let scans: Vec<PreparedScan> = batch
                .par_iter()
                .map(|&i| {
                    let f = &frames[i];
                    let key = epoch_key(epoch, f.index);
                    let t = augmentation_transform(
                        derive_seed(config.seed, Stream::Augment, key),
                        config.augment_rotation,
                        config.augment_flips,
                    );
                    let queries = subsample_queries(
                        &f.queries.transformed(&t),
                        config.max_queries,
                        derive_seed(config.seed, Stream::QuerySubsample, key),
                    );
                    model.prepare(&t.apply_cloud(&f.cloud), &queries)
                })
                .collect();
            let targets: Vec<&RowTargets> = scans.iter().map(|s| &s.targets).collect();
            let weights = match objective_weights(&targets, config.objective.weighting) {
                Ok(w) => w,
                Err(ModelError::NoSupervision) => {
                    warn!("epoch {epoch}: batch without any query in range, skipped");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let grads: Vec<_> = scans
                .par_iter()
                .zip(&weights)
                .map(|(scan, w)| {
                    let mut m = model.clone();
                    m.zero_grad();
                    let parts = m.accumulate(scan, w, &config.objective)?;
                    Ok((parts, m))
                })
                .collect::<Vec<Result<_, ModelError>>>();
            model.zero_grad();
            let mut batch_loss = LossParts::default();
            for g in grads {
                match g {
                    Ok((parts, m)) => {
                        batch_loss += parts;
                        model.add_grads(&m);
                    }
                    Err(ModelError::Nn(NnError::NonFinite { .. })) => {
                        return Err(non_finite(epoch, step, &model, &optimizer))
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            if !batch_loss.total.is_finite() {
                return Err(non_finite(epoch, step, &model, &optimizer));
            }
            match optimizer.step(&mut model.params_mut(), lr) {
                Ok(()) => {}
                Err(NnError::NonFinite { .. }) => {
                    return Err(non_finite(epoch, step, &model, &optimizer))
                }
                Err(e) => return Err(e.into()),
            }
            sum += batch_loss;
            steps += 1;
            step += 1;
        }
        let n = steps.max(1) as f64;
        let metrics = EpochMetrics {
            epoch,
            steps,
            lr,
            loss: sum.total / n,
            occupancy_loss: sum.occupancy / n,
            intensity_loss: sum.intensity / n,
            train_accuracy: if sum.rows > 0 {
                sum.correct as f64 / sum.rows as f64
            } else {
                0.0
            },
        };
        info!(
            "epoch {epoch}: loss {:.4} (occupancy {:.4}, intensity {:.4}), train accuracy {:.3}",
            metrics.loss, metrics.occupancy_loss, metrics.intensity_loss, metrics.train_accuracy
        );
        report.epochs.push(metrics);
        on_epoch(epoch, &model, &optimizer)?;
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(PretrainOutcome {
        model,
        optimizer,
        report,
    })
}
