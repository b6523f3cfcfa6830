use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};
use crate::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    /// Allocates moment buffers shaped like every parameter in `store`.
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Array2<f64>> = store
            .ids()
            .map(|id| Array2::zeros(store.value(id).dim()))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. If any gradient is non-finite nothing is modified.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Array2<f64>)],
    ) -> Result<(), AutodiffError> {
        for (id, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFiniteGradient(store.name(*id).to_string()));
            }
            if g.dim() != store.value(*id).dim() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    left: store.value(*id).dim(),
                    right: g.dim(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (id, g) in grads {
            let k = id.index();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            Zip::from(&mut *store.value_mut(*id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / correction1;
                    let v_hat = *v / correction2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
