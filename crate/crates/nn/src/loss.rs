//! Losses returning both the scalar value and its gradient.

use crate::layers::sigmoid;
use crate::tensor::Tensor2;
use crate::{ensure_finite, NnError, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    /// d(loss)/d(input), same length as the input.
    pub grad: Vec<T>,
}

fn check_len(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(NnError::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        });
    }
    Ok(())
}

/// Weighted binary cross-entropy on logits, `Σ w (max(x,0) − x t + ln(1 + e^−|x|))`.
///
/// The gradient is `w (σ(x) − t)`.
pub fn bce_with_logits<T: Real>(logits: &[T], targets: &[T], weights: &[T]) -> Result<LossGrad<T>> {
    check_len("bce_with_logits", logits.len(), targets.len())?;
    check_len("bce_with_logits", logits.len(), weights.len())?;
    ensure_finite("bce_with_logits", logits)?;
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for ((&x, &t), &w) in logits.iter().zip(targets).zip(weights) {
        let term = x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p();
        loss += w * term;
        grad.push(w * (sigmoid(x) - t));
    }
    Ok(LossGrad { loss, grad })
}

/// Per-element distance used by the intensity loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegressionMetric {
    /// `|p − t|`
    L1,
    /// `(p − t)²`
    L2,
}

impl RegressionMetric {
    pub fn name(self) -> &'static str {
        match self {
            RegressionMetric::L1 => "l1",
            RegressionMetric::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "l1" => Some(RegressionMetric::L1),
            "l2" => Some(RegressionMetric::L2),
            _ => None,
        }
    }
}

/// `Σ w · metric(p − t)`. Entries with zero weight contribute nothing and
/// receive zero gradient. The L1 subgradient at zero is zero.
pub fn weighted_regression<T: Real>(
    metric: RegressionMetric,
    pred: &[T],
    target: &[T],
    weights: &[T],
) -> Result<LossGrad<T>> {
    check_len("regression_loss", pred.len(), target.len())?;
    check_len("regression_loss", pred.len(), weights.len())?;
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for i in 0..pred.len() {
        let w = weights[i];
        if w == T::zero() {
            continue;
        }
        let d = pred[i] - target[i];
        match metric {
            RegressionMetric::L1 => {
                loss += w * d.abs();
                grad[i] = if d > T::zero() {
                    w
                } else if d < T::zero() {
                    -w
                } else {
                    T::zero()
                };
            }
            RegressionMetric::L2 => {
                loss += w * d * d;
                grad[i] = w * (d + d);
            }
        }
    }
    if !loss.is_finite() {
        return Err(NnError::NonFinite {
            op: "regression_loss",
        });
    }
    Ok(LossGrad { loss, grad })
}

fn masked_mean<T: Real>(
    metric: RegressionMetric,
    pred: &[T],
    target: &[T],
    mask: &[bool],
) -> Result<LossGrad<T>> {
    check_len("regression_loss", pred.len(), mask.len())?;
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok(LossGrad {
            loss: T::zero(),
            grad: vec![T::zero(); pred.len()],
        });
    }
    let w = T::one() / T::from_f64(count as f64);
    let weights: Vec<T> = mask
        .iter()
        .map(|&m| if m { w } else { T::zero() })
        .collect();
    weighted_regression(metric, pred, target, &weights)
}

/// Mean absolute error over masked entries; an empty mask gives zero.
pub fn l1_loss<T: Real>(pred: &[T], target: &[T], mask: &[bool]) -> Result<LossGrad<T>> {
    masked_mean(RegressionMetric::L1, pred, target, mask)
}

/// Mean squared error over masked entries; an empty mask gives zero.
pub fn l2_loss<T: Real>(pred: &[T], target: &[T], mask: &[bool]) -> Result<LossGrad<T>> {
    masked_mean(RegressionMetric::L2, pred, target, mask)
}

/// Mean softmax cross-entropy over rows of `logits` against class `labels`.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor2<T>,
    labels: &[usize],
) -> Result<(T, Tensor2<T>)> {
    check_len("softmax_cross_entropy", logits.rows(), labels.len())?;
    logits.ensure_finite("softmax_cross_entropy")?;
    let n = logits.rows();
    let mut grad = Tensor2::zeros(n, logits.cols());
    if n == 0 {
        return Ok((T::zero(), grad));
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut loss = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        if label >= logits.cols() {
            return Err(NnError::ShapeMismatch {
                op: "softmax_cross_entropy",
                expected: format!("label < {}", logits.cols()),
                got: label.to_string(),
            });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += (log_z - row[label]) * inv_n;
        let g = grad.row_mut(i);
        for (c, &v) in row.iter().enumerate() {
            g[c] = (v - log_z).exp() * inv_n;
        }
        g[label] -= inv_n;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        for t in [0.0f64, 1.0] {
            let out = bce_with_logits(&[0.0], &[t], &[1.0]).unwrap();
            assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
            assert!((out.grad[0] - (0.5 - t)).abs() < 1e-15);
        }
    }

    #[test]
    fn bce_rejects_non_finite_logits() {
        assert!(bce_with_logits(&[f64::NAN], &[1.0], &[1.0]).is_err());
        assert!(bce_with_logits(&[0.0, 1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn bce_is_finite_at_extreme_logits() {
        let out = bce_with_logits(&[1000.0f32, -1000.0], &[0.0, 1.0], &[0.5, 0.5]).unwrap();
        assert!((out.loss - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn l1_value_and_empty_mask() {
        let out = l1_loss(&[0.7f64], &[0.45], &[true]).unwrap();
        assert!((out.loss - 0.25).abs() < 1e-15);
        assert_eq!(out.grad, vec![1.0]);
        let none = l1_loss(&[0.7f64, 0.1], &[0.45, 0.2], &[false, false]).unwrap();
        assert_eq!(
            none,
            LossGrad {
                loss: 0.0,
                grad: vec![0.0, 0.0]
            }
        );
        let l2 = l2_loss(&[0.7f64, 0.1], &[0.45, 0.2], &[true, false]).unwrap();
        assert!((l2.loss - 0.0625).abs() < 1e-15);
        assert_eq!(l2.grad[1], 0.0);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor2::from_vec(2, 4, vec![0.0f64; 8]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((grad.get(0, 1) - (0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert!((grad.get(1, 0) - 0.125).abs() < 1e-15);
        assert!(softmax_cross_entropy(&logits, &[1, 4]).is_err());
    }
}
