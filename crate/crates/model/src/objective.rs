//! Occupancy + intensity objective and its per-row weights.
//!
//! With per-ball weighting, every support that receives at least one query
//! contributes equally, and its queries share that support's weight:
//! `w = 1 / (|S*| · |Q_s|)`. The intensity term has the same structure over
//! rows that carry an intensity target. Flat weighting is a single mean over
//! rows. Counts run over the whole batch, so per-scan losses add up.

use log::debug;
use visocc_nn::loss::{bce_with_logits, weighted_regression, RegressionMetric};
use visocc_nn::{Real, Tensor2};

use crate::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossWeighting {
    PerBall,
    Flat,
}

impl LossWeighting {
    pub fn name(self) -> &'static str {
        match self {
            LossWeighting::PerBall => "per_ball",
            LossWeighting::Flat => "flat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per_ball" => Some(LossWeighting::PerBall),
            "flat" => Some(LossWeighting::Flat),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub metric: RegressionMetric,
    pub weighting: LossWeighting,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            metric: RegressionMetric::L1,
            weighting: LossWeighting::PerBall,
        }
    }
}

/// Targets of the prediction rows of one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct RowTargets {
    /// Support that owns each row.
    pub group: Vec<usize>,
    pub occupancy: Vec<bool>,
    /// `None` for rows without an intensity target (sight queries, missing intensity).
    pub intensity: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowWeights {
    pub occupancy: Vec<f64>,
    pub intensity: Vec<f64>,
}

fn group_counts(t: &RowTargets, with_intensity: bool) -> std::collections::BTreeMap<usize, usize> {
    let mut counts = std::collections::BTreeMap::new();
    for (i, &g) in t.group.iter().enumerate() {
        if !with_intensity || t.intensity[i].is_some() {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Row weights for a batch of scans.
pub fn objective_weights(
    batch: &[&RowTargets],
    weighting: LossWeighting,
) -> Result<Vec<RowWeights>> {
    let occ_counts: Vec<_> = batch.iter().map(|t| group_counts(t, false)).collect();
    let int_counts: Vec<_> = batch.iter().map(|t| group_counts(t, true)).collect();
    let (n_occ, n_int) = match weighting {
        LossWeighting::PerBall => (
            occ_counts.iter().map(|c| c.len()).sum::<usize>(),
            int_counts.iter().map(|c| c.len()).sum::<usize>(),
        ),
        LossWeighting::Flat => (
            batch.iter().map(|t| t.group.len()).sum(),
            batch
                .iter()
                .map(|t| t.intensity.iter().filter(|v| v.is_some()).count())
                .sum(),
        ),
    };
    if n_occ == 0 {
        return Err(ModelError::NoSupervision);
    }
    if weighting == LossWeighting::PerBall {
        debug!("objective over {n_occ} supports with queries, {n_int} with intensity targets");
    }
    let weights = batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            let occupancy = t
                .group
                .iter()
                .map(|g| match weighting {
                    LossWeighting::PerBall => 1.0 / (n_occ as f64 * occ_counts[b][g] as f64),
                    LossWeighting::Flat => 1.0 / n_occ as f64,
                })
                .collect();
            let intensity = t
                .group
                .iter()
                .zip(&t.intensity)
                .map(|(g, v)| match (v, weighting) {
                    (None, _) => 0.0,
                    (Some(_), LossWeighting::PerBall) => {
                        1.0 / (n_int as f64 * int_counts[b][g] as f64)
                    }
                    (Some(_), LossWeighting::Flat) => 1.0 / n_int as f64,
                })
                .collect();
            RowWeights {
                occupancy,
                intensity,
            }
        })
        .collect();
    Ok(weights)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub occupancy: f64,
    pub intensity: f64,
    pub total: f64,
    /// Prediction rows seen, and rows whose logit sign matches the occupancy target.
    pub rows: usize,
    pub correct: usize,
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.occupancy += o.occupancy;
        self.intensity += o.intensity;
        self.total += o.total;
        self.rows += o.rows;
        self.correct += o.correct;
    }
}

/// Loss of decoder outputs (`rows × 2`) and the gradient w.r.t. them.
pub fn objective<T: Real>(
    out: &Tensor2<T>,
    targets: &RowTargets,
    weights: &RowWeights,
    config: &ObjectiveConfig,
) -> Result<(LossParts, Tensor2<T>)> {
    let n = out.rows();
    let cast = |v: &[f64]| v.iter().map(|&x| T::from_f64(x)).collect::<Vec<T>>();
    let logits: Vec<T> = (0..n).map(|i| out.get(i, 0)).collect();
    let preds: Vec<T> = (0..n).map(|i| out.get(i, 1)).collect();
    let occ_t: Vec<f64> = targets
        .occupancy
        .iter()
        .map(|&o| f64::from(u8::from(o)))
        .collect();
    let int_t: Vec<f64> = targets.intensity.iter().map(|v| v.unwrap_or(0.0)).collect();
    let occ = bce_with_logits(&logits, &cast(&occ_t), &cast(&weights.occupancy))?;
    let int = weighted_regression(
        config.metric,
        &preds,
        &cast(&int_t),
        &cast(&weights.intensity),
    )?;
    let lambda = T::from_f64(config.lambda);
    let mut grad = Tensor2::zeros(n, 2);
    for i in 0..n {
        grad.set(i, 0, occ.grad[i]);
        grad.set(i, 1, lambda * int.grad[i]);
    }
    let correct = logits
        .iter()
        .zip(&targets.occupancy)
        .filter(|(l, &o)| (**l > T::zero()) == o)
        .count();
    let (o, t) = (occ.loss.as_f64(), int.loss.as_f64());
    Ok((
        LossParts {
            occupancy: o,
            intensity: t,
            total: o + config.lambda * t,
            rows: n,
            correct,
        },
        grad,
    ))
}
