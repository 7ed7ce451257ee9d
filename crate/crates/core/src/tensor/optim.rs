//! Adam and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Scales every gradient by `max_norm / g` when the global l2 norm `g`
/// exceeds `max_norm`. Returns the factor that was applied (1 when the
/// gradients were left untouched).
pub fn clip_global_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    for p in params {
        p.with_grad_mut(|g| {
            if let Some(g) = g {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        });
    }
    factor
}

/// l2 norm of all gradients taken together; absent gradients count as zero.
pub fn global_grad_norm(params: &[Tensor]) -> f64 {
    params
        .iter()
        .map(|p| p.with_grad_mut(|g| g.map_or(0.0, |g| g.iter().map(|v| v * v).sum::<f64>())))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with bias correction. Moment buffers are aligned with the
/// parameter list the state was created for.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        let moments = params
            .iter()
            .map(|p| Moments {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            })
            .collect();
        AdamState {
            config,
            step: 0,
            moments,
        }
    }

    /// Applies one update to every parameter that requires gradients and
    /// clears the gradients afterwards.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::Contract(format!(
                "adam state holds {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for (i, (p, mom)) in params.iter().zip(&self.moments).enumerate() {
            if mom.m.len() != p.numel() {
                return Err(Error::Contract(format!(
                    "adam moments for parameter {i} have {} entries, parameter has {}",
                    mom.m.len(),
                    p.numel()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (p, mom) in params.iter().zip(self.moments.iter_mut()) {
            if !p.requires_grad() {
                continue;
            }
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            p.update_data(|w| {
                for (((w, g), m), v) in w.iter_mut().zip(&grad).zip(mom.m.iter_mut()).zip(mom.v.iter_mut()) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(values: &[f64]) -> Tensor {
        let t = Tensor::param(vec![0.0; values.len()], &[values.len()]).unwrap();
        t.set_grad(Some(values.to_vec()));
        t
    }

    #[test]
    fn clip_at_threshold_is_identity() {
        let p = with_grad(&[0.3, 0.4]);
        let f = clip_global_norm(std::slice::from_ref(&p), 0.5);
        assert_eq!(f, 1.0);
        assert_eq!(p.grad().unwrap(), vec![0.3, 0.4]);
    }

    #[test]
    fn clip_scales_down_large_gradients() {
        let p = with_grad(&[0.6, 0.8]);
        let f = clip_global_norm(std::slice::from_ref(&p), 0.5);
        assert!((f - 0.5).abs() < 1e-15);
        let g = p.grad().unwrap();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn clip_of_nothing_is_unit() {
        assert_eq!(clip_global_norm(&[], 0.5), 1.0);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let p = Tensor::param(vec![1.5], &[1]).unwrap();
        p.set_grad(Some(vec![0.0]));
        let mut adam = AdamState::new(std::slice::from_ref(&p), AdamConfig::default());
        adam.step(std::slice::from_ref(&p)).unwrap();
        assert_eq!(p.to_vec(), vec![1.5]);
        assert!(p.grad().is_none());
    }

    #[test]
    fn single_step_hand_computed() {
        let p = Tensor::param(vec![1.0], &[1]).unwrap();
        p.set_grad(Some(vec![1.0]));
        let mut adam = AdamState::new(std::slice::from_ref(&p), AdamConfig::default());
        adam.step(std::slice::from_ref(&p)).unwrap();
        // m_hat = v_hat = 1 after bias correction.
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((p.to_vec()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let p = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let q = Tensor::param(vec![1.0], &[1]).unwrap();
        let mut adam = AdamState::new(std::slice::from_ref(&q), AdamConfig::default());
        assert!(adam.step(std::slice::from_ref(&p)).is_err());
        assert!(adam.step(&[]).is_err());
    }
}
