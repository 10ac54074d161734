//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use crate::{NnError, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moments for an ordered list of parameter tensors.
///
/// The moment buffers are created on the first step from the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update of every `(value, gradient)` pair at learning rate `lr`.
    ///
    /// The update is written out before any parameter changes, so a
    /// non-finite result leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut [(&mut [T], &[T])], lr: f64) -> Result<()> {
        if self.m.is_empty() && self.step == 0 {
            self.m = params
                .iter()
                .map(|(p, _)| vec![T::zero(); p.len()])
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(NnError::ShapeMismatch {
                op: "adamw_step",
                expected: format!("{} parameter tensors", self.m.len()),
                got: params.len().to_string(),
            });
        }
        for (i, (p, g)) in params.iter().enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(NnError::ShapeMismatch {
                    op: "adamw_step",
                    expected: format!("{} values in tensor {i}", self.m[i].len()),
                    got: format!("{} values, {} gradients", p.len(), g.len()),
                });
            }
            crate::ensure_finite("adamw_step", g)?;
        }

        let c = self.config;
        let t = self.step + 1;
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let decay = T::from_f64(1.0 - lr * c.weight_decay);
        let step_size = T::from_f64(lr / bc1);
        let bc2_sqrt = T::from_f64(bc2.sqrt());
        let eps = T::from_f64(c.eps);

        let mut new_m = self.m.clone();
        let mut new_v = self.v.clone();
        let mut new_p: Vec<Vec<T>> = Vec::with_capacity(params.len());
        for (i, (p, g)) in params.iter().enumerate() {
            let mut out = Vec::with_capacity(p.len());
            for j in 0..p.len() {
                let m = b1 * new_m[i][j] + one_b1 * g[j];
                let v = b2 * new_v[i][j] + one_b2 * g[j] * g[j];
                new_m[i][j] = m;
                new_v[i][j] = v;
                let denom = v.sqrt() / bc2_sqrt + eps;
                out.push(p[j] * decay - step_size * m / denom);
            }
            crate::ensure_finite("adamw_step", &out)?;
            new_p.push(out);
        }
        for ((p, _), values) in params.iter_mut().zip(new_p) {
            p.copy_from_slice(&values);
        }
        self.m = new_m;
        self.v = new_v;
        self.step = t;
        Ok(())
    }
}

/// `base · ½(1 + cos(π · epoch / (total − 1)))`; `base` when `total == 1`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    if total_epochs <= 1 {
        return base_lr;
    }
    let frac = epoch.min(total_epochs - 1) as f64 / (total_epochs - 1) as f64;
    let lr = base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
    if epoch + 1 >= total_epochs {
        0.0
    } else {
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut state = AdamWState::<f64>::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut p = vec![1.5, -2.0];
        let g = vec![0.0, 0.0];
        state.step(&mut [(&mut p, &g)], 1e-3).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut state = AdamWState::<f64>::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut p = vec![0.0];
        state.step(&mut [(&mut p, &[1.0])], 1e-3).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10, "{}", p[0]);
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let mut state = AdamWState::<f64>::new(AdamWConfig::default());
        let mut p = vec![0.0, 1.0];
        assert!(state.step(&mut [(&mut p, &[1.0])], 1e-3).is_err());
        let mut q = vec![0.0];
        assert!(state.step(&mut [(&mut q, &[f64::NAN])], 1e-3).is_err());
        assert_eq!(q, vec![0.0]);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 0.1), 0.1);
        assert_eq!(cosine_lr(9, 10, 0.1), 0.0);
        assert!((cosine_lr(5, 11, 0.1) - 0.05).abs() < 1e-15);
        assert_eq!(cosine_lr(0, 1, 0.1), 0.1);
    }
}
