//! Held-out occupancy evaluation against query labels and simulator truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use visocc_core::rng::{derive_seed, Stream};
use visocc_core::{subsample_queries, OffsetMode, Scene};
use visocc_model::Model;

use crate::data::{make_frame, scene, simulate_scan, DataConfig, Frame, SceneRange};
use crate::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.true_positive += 1,
            (true, false) => self.false_positive += 1,
            (false, false) => self.true_negative += 1,
            (false, true) => self.false_negative += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.true_positive + self.true_negative, self.total()).unwrap_or(0.0)
    }

    /// `None` when nothing is predicted positive.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.true_positive, self.true_positive + self.false_positive)
    }

    /// `None` when nothing is actually positive.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.true_positive, self.true_positive + self.false_negative)
    }

    pub fn metrics(&self) -> BinaryMetrics {
        BinaryMetrics {
            counts: *self,
            accuracy: self.accuracy(),
            precision: self.precision(),
            recall: self.recall(),
        }
    }
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Positive class is "occupied".
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub counts: Confusion,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMetrics {
    pub threshold: f64,
    pub queries: usize,
    /// Queries with at least one support in range; only these are scored.
    pub covered: usize,
    pub coverage: f64,
    pub vs_labels: BinaryMetrics,
    pub vs_truth: BinaryMetrics,
    /// Share of the more frequent label among scored queries.
    pub majority_fraction: f64,
    /// Share of scored queries whose label disagrees with the simulator.
    pub label_noise_rate: f64,
}

/// A held-out scan with its queries and the scene that produced it.
#[derive(Clone, Debug)]
pub struct HeldOutFrame {
    pub frame: Frame,
    pub scene: Scene,
}

/// Held-out frames with at most `max_queries` queries each.
pub fn held_out_frames(
    data: &DataConfig,
    range: SceneRange,
    max_points: usize,
    max_queries: usize,
    delta: f64,
    mode: OffsetMode,
) -> Result<Vec<HeldOutFrame>> {
    range
        .indices()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&i| {
            let scene = scene(data, i)?;
            let mut frame = make_frame(
                &simulate_scan(data, &scene, i, max_points)?,
                data.seed,
                delta,
                mode,
            );
            frame.queries = subsample_queries(
                &frame.queries,
                max_queries,
                derive_seed(data.seed, Stream::QuerySubsample, i),
            );
            Ok(HeldOutFrame { frame, scene })
        })
        .collect()
}

/// Predicted occupancy probability, label and truth of every covered query.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryScores {
    pub queries: usize,
    pub probability: Vec<f64>,
    pub label: Vec<bool>,
    pub truth: Vec<bool>,
}

/// Scores each query by the mean occupancy probability over its in-range
/// supports, as decoded by the model's head.
pub fn score_queries(model: &Model<f32>, frames: &[HeldOutFrame]) -> Result<QueryScores> {
    let per_frame: Vec<Result<QueryScores>> = frames
        .par_iter()
        .map(|h| {
            let q = &h.frame.queries;
            let scan = model.prepare(&h.frame.cloud, q);
            let probs = model.query_occupancy(&scan, q.len())?;
            let mut s = QueryScores {
                queries: q.len(),
                ..Default::default()
            };
            for (i, p) in probs.into_iter().enumerate() {
                if let Some(p) = p {
                    s.probability.push(p);
                    s.label.push(q.occupancy[i]);
                    s.truth.push(h.scene.true_occupancy(q.positions[i]));
                }
            }
            Ok(s)
        })
        .collect();
    let mut all = QueryScores::default();
    for s in per_frame {
        let s = s?;
        all.queries += s.queries;
        all.probability.extend(s.probability);
        all.label.extend(s.label);
        all.truth.extend(s.truth);
    }
    Ok(all)
}

/// Metrics of scored queries predicted "occupied" when the probability exceeds `threshold`.
pub fn occupancy_metrics(scores: &QueryScores, threshold: f64) -> OccupancyMetrics {
    let (mut vs_labels, mut vs_truth) = (Confusion::default(), Confusion::default());
    let mut noisy = 0;
    for i in 0..scores.probability.len() {
        let pred = scores.probability[i] > threshold;
        vs_labels.add(pred, scores.label[i]);
        vs_truth.add(pred, scores.truth[i]);
        noisy += usize::from(scores.label[i] != scores.truth[i]);
    }
    let covered = scores.probability.len();
    let full = scores.label.iter().filter(|&&l| l).count();
    let frac = |n: usize| {
        if covered > 0 {
            n as f64 / covered as f64
        } else {
            0.0
        }
    };
    OccupancyMetrics {
        threshold,
        queries: scores.queries,
        covered,
        coverage: if scores.queries > 0 {
            covered as f64 / scores.queries as f64
        } else {
            0.0
        },
        vs_labels: vs_labels.metrics(),
        vs_truth: vs_truth.metrics(),
        majority_fraction: frac(full.max(covered - full)),
        label_noise_rate: frac(noisy),
    }
}

pub fn evaluate_occupancy(
    model: &Model<f32>,
    frames: &[HeldOutFrame],
    threshold: f64,
) -> Result<OccupancyMetrics> {
    Ok(occupancy_metrics(&score_queries(model, frames)?, threshold))
}

/// Label metrics at each threshold.
pub fn threshold_sweep(scores: &QueryScores, thresholds: &[f64]) -> Vec<(f64, BinaryMetrics)> {
    thresholds
        .iter()
        .map(|&t| (t, occupancy_metrics(scores, t).vs_labels))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_ratios() {
        let mut c = Confusion::default();
        for (p, a) in [
            (true, true),
            (true, false),
            (false, false),
            (false, false),
            (false, true),
        ] {
            c.add(p, a);
        }
        assert_eq!(c.total(), 5);
        assert_eq!(c.accuracy(), 0.6);
        assert_eq!(c.precision(), Some(0.5));
        assert_eq!(c.recall(), Some(0.5));
        assert_eq!(Confusion::default().precision(), None);
    }
}
