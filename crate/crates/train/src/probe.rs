//! Downstream semantic probes and latent separability probes.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use visocc_core::rng::{keyed_rng, Stream};
use visocc_core::PointCloud;
use visocc_model::encoder::Encoder;
use visocc_model::{encoder_input, EncoderInput, LATENT_DIM};
use visocc_nn::init::kaiming_uniform;
use visocc_nn::loss::softmax_cross_entropy;
use visocc_nn::{cosine_lr, AdamWConfig, AdamWState, LinearLayer, Real, Tensor2};

use crate::data::shuffled;
use crate::{Result, TrainError};

/// Init key of the probe's linear head, clear of the model's layer keys.
const HEAD_LAYER: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    LinearProbe,
    Finetune,
}

impl ProbeMode {
    pub fn name(self) -> &'static str {
        match self {
            ProbeMode::LinearProbe => "linear_probe",
            ProbeMode::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear_probe" => Some(ProbeMode::LinearProbe),
            "finetune" => Some(ProbeMode::Finetune),
            _ => None,
        }
    }
}

/// Epochs per label fraction of the reference protocol; the probe rescales
/// the column so that fraction 1 maps to [`ProbeConfig::epochs`].
pub const EPOCHS_PER_FRACTION: [(f64, usize); 5] =
    [(0.001, 1000), (0.01, 500), (0.1, 100), (0.5, 50), (1.0, 30)];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    /// Epochs at label fraction 1.
    pub epochs: usize,
    pub base_lr: f64,
    pub label_fraction: f64,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            mode: ProbeMode::LinearProbe,
            epochs: 100,
            base_lr: 1e-3,
            label_fraction: 1.0,
            batch_size: 4,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(TrainError::InvalidConfig(
                "label fraction must lie in (0, 1]".into(),
            ));
        }
        if self.epochs == 0
            || self.batch_size == 0
            || !(self.base_lr > 0.0)
            || !(self.weight_decay >= 0.0)
        {
            return Err(TrainError::InvalidConfig(
                "probe epochs, batch size and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Epoch count for the configured label fraction: the reference entry of
    /// the smallest tabulated fraction at or above it, scaled by `epochs / 30`.
    pub fn scheduled_epochs(&self) -> usize {
        let (_, reference) = EPOCHS_PER_FRACTION
            .iter()
            .find(|(f, _)| self.label_fraction <= *f + 1e-12)
            .copied()
            .unwrap_or((1.0, 30));
        let full = EPOCHS_PER_FRACTION[EPOCHS_PER_FRACTION.len() - 1].1;
        ((reference * self.epochs) as f64 / full as f64)
            .round()
            .max(1.0) as usize
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.base_lr,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: u32,
    pub eval_points: u64,
    /// `None` when the class is absent from the evaluation split or from the
    /// training labels; such classes are left out of the mean.
    pub iou: Option<f64>,
    pub absent_from_training: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    pub mode: ProbeMode,
    pub label_fraction: f64,
    pub epochs: usize,
    pub train_scenes: usize,
    pub train_points: usize,
    pub eval_points: usize,
    pub accuracy: f64,
    pub classes: Vec<ClassIou>,
    pub miou: f64,
    /// Mean cross-entropy per epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedAccuracy {
    pub trained: f64,
    pub random: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityMetrics {
    /// Ground class against all other points.
    pub ground_vs_other: PairedAccuracy,
    /// Points with x above the sensor's against points below it.
    pub left_right: PairedAccuracy,
    /// Probe on the trained encoder with coin-flip labels.
    pub random_labels: f64,
    pub eval_points: usize,
}

/// Rows of all `parts`, stacked.
fn vstack<T: Real>(parts: &[&Tensor2<T>]) -> Result<Tensor2<T>> {
    let cols = parts.first().map_or(LATENT_DIM, |t| t.cols());
    let rows = parts.iter().map(|t| t.rows()).sum();
    let data = parts
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    Ok(Tensor2::from_vec(rows, cols, data)?)
}

fn argmax_rows(logits: &Tensor2<f32>) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            (1..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// Per-dimension affine map to zero mean and unit variance, fitted on the
/// initial encoder's training latents and then held fixed.
#[derive(Clone, Debug, PartialEq)]
struct Standardizer {
    mean: Vec<f32>,
    inv_std: Vec<f32>,
}

impl Standardizer {
    fn fit(latents: &[Tensor2<f32>]) -> Self {
        let cols = latents.first().map_or(LATENT_DIM, |t| t.cols());
        let (mut sum, mut sq, mut n) = (vec![0f64; cols], vec![0f64; cols], 0usize);
        for t in latents {
            for i in 0..t.rows() {
                for (j, &v) in t.row(i).iter().enumerate() {
                    sum[j] += f64::from(v);
                    sq[j] += f64::from(v) * f64::from(v);
                }
            }
            n += t.rows();
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let inv_std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    (1.0 / sd) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            inv_std,
        }
    }

    fn apply(&self, x: &Tensor2<f32>) -> Tensor2<f32> {
        let mut y = x.clone();
        for i in 0..y.rows() {
            for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) * self.inv_std[j];
            }
        }
        y
    }

    /// Gradient w.r.t. the unstandardized input.
    fn backward(&self, dy: &Tensor2<f32>) -> Tensor2<f32> {
        let mut dx = dy.clone();
        for i in 0..dx.rows() {
            for (j, v) in dx.row_mut(i).iter_mut().enumerate() {
                *v *= self.inv_std[j];
            }
        }
        dx
    }
}

/// A trained classifier: encoder, fixed standardization and linear head.
struct Classifier {
    encoder: Encoder<f32>,
    standardizer: Standardizer,
    head: LinearLayer<f32>,
}

fn encode_scans(encoder: &Encoder<f32>, inputs: &[EncoderInput]) -> Result<Vec<Tensor2<f32>>> {
    Ok(inputs
        .par_iter()
        .map(|i| encoder.encode_all(i))
        .collect::<Result<Vec<_>, _>>()?)
}

fn step_params<'a>(
    encoder: Option<&'a mut Encoder<f32>>,
    head: &'a mut LinearLayer<f32>,
) -> Vec<(&'a mut [f32], &'a [f32])> {
    let mut params: Vec<(&mut [f32], &[f32])> = Vec::new();
    if let Some(e) = encoder {
        params.extend(e.layers_mut().flat_map(|l| l.params_mut()));
    }
    params.extend(head.params_mut());
    params
}

/// Trains a linear head on standardized latents (and, when `finetune`, the
/// encoder) with softmax cross-entropy and a cosine schedule. Returns the
/// classifier and the per-epoch mean loss.
fn train_classifier(
    encoder: &Encoder<f32>,
    finetune: bool,
    inputs: &[EncoderInput],
    labels: &[Vec<usize>],
    n_classes: usize,
    config: &ProbeConfig,
    epochs: usize,
) -> Result<(Classifier, Vec<f64>)> {
    let mut encoder = encoder.clone();
    let mut head: LinearLayer<f32> =
        kaiming_uniform(LATENT_DIM, n_classes, config.seed, HEAD_LAYER);
    let mut optimizer = AdamWState::new(config.optimizer());
    let initial = encode_scans(&encoder, inputs)?;
    let standardizer = Standardizer::fit(&initial);
    let frozen: Option<Vec<Tensor2<f32>>> =
        (!finetune).then(|| initial.iter().map(|z| standardizer.apply(z)).collect());
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let lr = cosine_lr(epoch, epochs, config.base_lr);
        let order = shuffled(
            inputs.len(),
            config.seed,
            Stream::ProbeShuffle,
            epoch as u64,
        );
        let (mut loss_sum, mut steps) = (0.0, 0);
        for batch in order.chunks(config.batch_size) {
            let y: Vec<usize> = batch
                .iter()
                .flat_map(|&i| labels[i].iter().copied())
                .collect();
            if y.is_empty() {
                continue;
            }
            head.zero_grad();
            let loss = if let Some(latents) = &frozen {
                let x = vstack(&batch.iter().map(|&i| &latents[i]).collect::<Vec<_>>())?;
                let (loss, dlogits) = softmax_cross_entropy(&head.forward(&x)?, &y)?;
                head.accumulate_grads(&x, &dlogits)?;
                loss
            } else {
                encoder.layers_mut().for_each(LinearLayer::zero_grad);
                let mut forwards = Vec::with_capacity(batch.len());
                for &i in batch {
                    let all: Vec<usize> = (0..inputs[i].len()).collect();
                    forwards.push(encoder.forward(&inputs[i], &all)?);
                }
                let x = standardizer.apply(&vstack(
                    &forwards.iter().map(|(z, _)| z).collect::<Vec<_>>(),
                )?);
                let (loss, dlogits) = softmax_cross_entropy(&head.forward(&x)?, &y)?;
                let dz = standardizer.backward(&head.backward(&x, &dlogits)?);
                let mut row = 0;
                for (z, cache) in &forwards {
                    let idx: Vec<usize> = (row..row + z.rows()).collect();
                    encoder.backward(cache, &dz.gather_rows(&idx))?;
                    row += z.rows();
                }
                loss
            };
            optimizer.step(
                &mut step_params(finetune.then_some(&mut encoder), &mut head),
                lr,
            )?;
            loss_sum += loss.as_f64();
            steps += 1;
        }
        curve.push(loss_sum / steps.max(1) as f64);
    }
    Ok((
        Classifier {
            encoder,
            standardizer,
            head,
        },
        curve,
    ))
}

fn predict(classifier: &Classifier, inputs: &[EncoderInput]) -> Result<Vec<Vec<usize>>> {
    encode_scans(&classifier.encoder, inputs)?
        .iter()
        .map(|z| {
            Ok(argmax_rows(
                &classifier.head.forward(&classifier.standardizer.apply(z))?,
            ))
        })
        .collect()
}

fn class_index(cloud: &PointCloud, classes: &[u32]) -> Result<Vec<usize>> {
    let labels = cloud
        .labels()
        .ok_or_else(|| TrainError::InvalidConfig("probe scans need class labels".into()))?;
    labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| TrainError::InvalidConfig(format!("unknown class {l}")))
        })
        .collect()
}

/// Indices of the labeled training scenes kept at `fraction` (at least one).
pub fn label_subset(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let keep = ((fraction * n as f64).ceil() as usize).clamp(1.min(n), n);
    let mut kept: Vec<usize> = shuffled(n, seed, Stream::ProbeSplit, 0)
        .into_iter()
        .take(keep)
        .collect();
    kept.sort_unstable();
    kept
}

/// Semantic probe of `encoder` on labeled scans; `classes` lists the class ids.
pub fn probe(
    encoder: &Encoder<f32>,
    use_intensity: bool,
    config: &ProbeConfig,
    train: &[PointCloud],
    eval: &[PointCloud],
    classes: &[u32],
) -> Result<ProbeMetrics> {
    config.validate()?;
    if train.is_empty() || eval.is_empty() || classes.is_empty() {
        return Err(TrainError::InvalidConfig(
            "probe needs training scans, evaluation scans and classes".into(),
        ));
    }
    let kept = label_subset(train.len(), config.label_fraction, config.seed);
    let inputs: Vec<EncoderInput> = kept
        .iter()
        .map(|&i| encoder_input(&train[i], use_intensity))
        .collect();
    let labels: Vec<Vec<usize>> = kept
        .iter()
        .map(|&i| class_index(&train[i], classes))
        .collect::<Result<_>>()?;
    let epochs = config.scheduled_epochs();
    let finetune = config.mode == ProbeMode::Finetune;
    let (classifier, loss_curve) = train_classifier(
        encoder,
        finetune,
        &inputs,
        &labels,
        classes.len(),
        config,
        epochs,
    )?;

    let eval_inputs: Vec<EncoderInput> = eval
        .iter()
        .map(|c| encoder_input(c, use_intensity))
        .collect();
    let eval_labels: Vec<Vec<usize>> = eval
        .iter()
        .map(|c| class_index(c, classes))
        .collect::<Result<_>>()?;
    let predicted = predict(&classifier, &eval_inputs)?;

    let c = classes.len();
    let mut confusion = vec![vec![0u64; c]; c];
    for (pred, truth) in predicted.iter().zip(&eval_labels) {
        for (&p, &t) in pred.iter().zip(truth) {
            confusion[t][p] += 1;
        }
    }
    let mut trained_on = vec![false; c];
    labels.iter().flatten().for_each(|&l| trained_on[l] = true);
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..c).map(|k| confusion[k][k]).sum();
    let per_class: Vec<ClassIou> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let actual: u64 = confusion[k].iter().sum();
            let predicted: u64 = confusion.iter().map(|r| r[k]).sum();
            let absent = !trained_on[k];
            let iou = (actual > 0 && !absent).then(|| tp as f64 / (actual + predicted - tp) as f64);
            ClassIou {
                class: classes[k],
                eval_points: actual,
                iou,
                absent_from_training: absent,
            }
        })
        .collect();
    for k in per_class
        .iter()
        .filter(|k| k.absent_from_training && k.eval_points > 0)
    {
        log::warn!(
            "class {} has no training labels; its IoU is excluded from the mean",
            k.class
        );
    }
    let scored: Vec<f64> = per_class.iter().filter_map(|k| k.iou).collect();
    let miou = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(ProbeMetrics {
        mode: config.mode,
        label_fraction: config.label_fraction,
        epochs,
        train_scenes: kept.len(),
        train_points: labels.iter().map(Vec::len).sum(),
        eval_points: total as usize,
        accuracy: if total > 0 {
            correct as f64 / total as f64
        } else {
            0.0
        },
        classes: per_class,
        miou,
        loss_curve,
    })
}

/// Accuracy of a binary linear probe on frozen latents.
fn binary_probe(
    encoder: &Encoder<f32>,
    train_inputs: &[EncoderInput],
    train_labels: &[Vec<usize>],
    eval_inputs: &[EncoderInput],
    eval_labels: &[Vec<usize>],
    config: &ProbeConfig,
) -> Result<f64> {
    let linear = ProbeConfig {
        mode: ProbeMode::LinearProbe,
        ..*config
    };
    let (classifier, _) = train_classifier(
        encoder,
        false,
        train_inputs,
        train_labels,
        2,
        &linear,
        config.epochs,
    )?;
    let predicted = predict(&classifier, eval_inputs)?;
    let (mut correct, mut total) = (0usize, 0usize);
    for (p, t) in predicted.iter().zip(eval_labels) {
        correct += p.iter().zip(t).filter(|(a, b)| a == b).count();
        total += t.len();
    }
    Ok(if total > 0 {
        correct as f64 / total as f64
    } else {
        0.0
    })
}

/// Linear separability of ground vs. other points and of the two half-spaces
/// `x > x_sensor` / `x < x_sensor`, for a trained and a random encoder, plus a
/// coin-flip-label control.
pub fn separability_probes(
    trained: &Encoder<f32>,
    random: &Encoder<f32>,
    use_intensity: bool,
    config: &ProbeConfig,
    train: &[PointCloud],
    eval: &[PointCloud],
    ground_class: u32,
) -> Result<SeparabilityMetrics> {
    config.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(TrainError::InvalidConfig(
            "separability probes need training and evaluation scans".into(),
        ));
    }
    let inputs = |s: &[PointCloud]| {
        s.iter()
            .map(|c| encoder_input(c, use_intensity))
            .collect::<Vec<_>>()
    };
    let (train_in, eval_in) = (inputs(train), inputs(eval));
    let ground = |s: &[PointCloud]| -> Result<Vec<Vec<usize>>> {
        s.iter()
            .map(|c| {
                let labels = c.labels().ok_or_else(|| {
                    TrainError::InvalidConfig("separability needs class labels".into())
                })?;
                Ok(labels
                    .iter()
                    .map(|&l| usize::from(l == ground_class))
                    .collect())
            })
            .collect()
    };
    let side = |s: &[PointCloud]| -> Vec<Vec<usize>> {
        s.iter()
            .map(|c| {
                c.points()
                    .iter()
                    .map(|p| usize::from(p.x > c.sensor_origin().x))
                    .collect()
            })
            .collect()
    };
    let coin = |s: &[PointCloud], offset: u64| -> Vec<Vec<usize>> {
        s.iter()
            .enumerate()
            .map(|(i, c)| {
                let mut rng = keyed_rng(config.seed, Stream::ProbeSplit, offset + i as u64 + 1);
                (0..c.len())
                    .map(|_| usize::from(rng.random::<bool>()))
                    .collect()
            })
            .collect()
    };
    let paired = |train_y: &[Vec<usize>], eval_y: &[Vec<usize>]| -> Result<PairedAccuracy> {
        let t = binary_probe(trained, &train_in, train_y, &eval_in, eval_y, config)?;
        let r = binary_probe(random, &train_in, train_y, &eval_in, eval_y, config)?;
        Ok(PairedAccuracy {
            trained: t,
            random: r,
            margin: t - r,
        })
    };
    let ground_vs_other = paired(&ground(train)?, &ground(eval)?)?;
    let left_right = paired(&side(train), &side(eval))?;
    let random_labels = binary_probe(
        trained,
        &train_in,
        &coin(train, 0),
        &eval_in,
        &coin(eval, 1 << 32),
        config,
    )?;
    Ok(SeparabilityMetrics {
        ground_vs_other,
        left_right,
        random_labels,
        eval_points: eval.iter().map(PointCloud::len).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_schedule_scales_reference_table() {
        let at = |f: f64, e: usize| {
            ProbeConfig {
                label_fraction: f,
                epochs: e,
                ..Default::default()
            }
            .scheduled_epochs()
        };
        assert_eq!(at(1.0, 30), 30);
        assert_eq!(at(0.5, 30), 50);
        assert_eq!(at(0.001, 30), 1000);
        assert_eq!(at(0.05, 3), 10);
        assert_eq!(at(0.3, 60), 100);
    }

    #[test]
    fn label_subset_keeps_at_least_one() {
        assert_eq!(label_subset(10, 0.001, 0).len(), 1);
        assert_eq!(label_subset(10, 1.0, 0), (0..10).collect::<Vec<_>>());
        assert_eq!(label_subset(10, 0.25, 4).len(), 3);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let t = Tensor2::from_vec(2, 3, vec![1.0f32, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1]);
    }
}
