//! Adam with bias correction and optional global gradient-norm clipping.

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use std::collections::HashMap;

#[derive(Debug, thiserror::Error)]
pub enum AdamError {
    #[error("non-finite gradient for parameter {name:?} (flat index {index}); update aborted")]
    NonFiniteGrad { name: String, index: usize },
    #[error("gradient length {found} does not match parameter {name:?} ({expected})")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm ceiling across all gradients in one step; None disables.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(50.0),
        }
    }
}

/// What one step did; useful for logging.
#[derive(Debug, Clone, Copy)]
pub struct AdamStepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

pub struct Adam<S> {
    pub cfg: AdamConfig,
    step: u64,
    moments: HashMap<usize, (Vec<S>, Vec<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        assert!(cfg.lr > 0.0, "adam: lr must be positive");
        Adam {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        assert!(lr > 0.0, "adam: lr must be positive");
        self.cfg.lr = lr;
    }

    /// Apply one update. Scans every gradient first: any non-finite entry or
    /// length mismatch aborts before mutating parameters or moments.
    pub fn step(
        &mut self,
        store: &mut ParamStore<S>,
        grads: &[(ParamId, Vec<S>)],
    ) -> Result<AdamStepStats, AdamError> {
        let mut sq_sum = 0.0f64;
        for (id, g) in grads {
            let expected = store.get(*id).values.len();
            if g.len() != expected {
                return Err(AdamError::LengthMismatch {
                    name: store.name(*id).to_string(),
                    expected,
                    found: g.len(),
                });
            }
            for (i, v) in g.iter().enumerate() {
                let v = v.to_f64_lossy();
                if !v.is_finite() {
                    return Err(AdamError::NonFiniteGrad {
                        name: store.name(*id).to_string(),
                        index: i,
                    });
                }
                sq_sum += v * v;
            }
        }
        let grad_norm = sq_sum.sqrt();
        let mut scale = 1.0;
        let mut clipped = false;
        if let Some(clip) = self.cfg.clip_norm {
            if grad_norm > clip {
                scale = clip / grad_norm;
                clipped = true;
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = S::of(self.cfg.beta1);
        let b2 = S::of(self.cfg.beta2);
        let one_m_b1 = S::one() - b1;
        let one_m_b2 = S::one() - b2;
        let bc1 = S::one() - S::of(self.cfg.beta1.powi(t));
        let bc2 = S::one() - S::of(self.cfg.beta2.powi(t));
        let lr = S::of(self.cfg.lr);
        let eps = S::of(self.cfg.eps);
        let gscale = S::of(scale);

        for (id, g) in grads {
            let tensor = store.get_mut(*id);
            let (m, v) = self
                .moments
                .entry(id.0)
                .or_insert_with(|| (vec![S::zero(); g.len()], vec![S::zero(); g.len()]));
            for i in 0..g.len() {
                let gi = g[i] * gscale;
                m[i] = b1 * m[i] + one_m_b1 * gi;
                v[i] = b2 * v[i] + one_m_b2 * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.values[i] = tensor.values[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(AdamStepStats { grad_norm, clipped })
    }
}
