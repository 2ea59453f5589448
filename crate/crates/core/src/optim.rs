//! Optimization: cosine-annealed learning rate and Adam with bias
//! correction.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::network::ParamSet;
use crate::tensor::Tensor;

/// Cosine annealing from `lr_init` at step 0 down to zero at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_init: f64) -> Result<f64> {
    if step > total_steps || total_steps == 0 {
        return Err(Error::OutOfRange {
            context: "cosine schedule step outside [0, total_steps]",
        });
    }
    Ok(lr_init * 0.5 * (1.0 + fmath::cos(core::f64::consts::PI * step as f64 / total_steps as f64)))
}

/// Adam hyperparameters.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    /// Fresh zeroed moments matching a parameter set.
    pub fn new(params: &ParamSet) -> Self {
        let m = (0..params.len())
            .map(|i| Tensor::zeros(params.value(i).shape()))
            .collect::<Vec<_>>();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    /// Rebuilds state from stored moments (checkpoint resume).
    pub fn from_parts(m: Vec<Tensor>, v: Vec<Tensor>, step: u64, params: &ParamSet) -> Result<Self> {
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::InvalidConfig {
                what: format!(
                    "optimizer state holds {} moments for {} parameters",
                    m.len(),
                    params.len()
                ),
            });
        }
        for i in 0..params.len() {
            if m[i].shape() != params.value(i).shape() || v[i].shape() != params.value(i).shape() {
                return Err(Error::InvalidConfig {
                    what: format!("optimizer moment shape mismatch at {}", params.name(i)),
                });
            }
        }
        Ok(Self { m, v, step })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// One Adam update. Parameters whose gradient is `None` (not reached by
    /// the backward pass) are left completely untouched, moments included.
    /// A NaN gradient aborts, naming the offending parameter.
    pub fn apply(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<Tensor>],
        lr: f64,
        hp: &AdamParams,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::InvalidConfig {
                what: format!(
                    "{} gradients supplied for {} parameters",
                    grads.len(),
                    params.len()
                ),
            });
        }
        for (i, grad) in grads.iter().enumerate() {
            if let Some(g) = grad {
                if !g.all_finite() {
                    return Err(Error::NonFinite {
                        what: format!("gradient of {}", params.name(i)),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as u32;
        let bc1 = 1.0 - fmath::powi(hp.beta1, t);
        let bc2 = 1.0 - fmath::powi(hp.beta2, t);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = params.value_mut(i).data_mut();
            for ((wv, (mv, vv)), &gv) in w
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(g.data())
            {
                *mv = hp.beta1 * *mv + (1.0 - hp.beta1) * gv;
                *vv = hp.beta2 * *vv + (1.0 - hp.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *wv -= lr * m_hat / (fmath::sqrt(v_hat) + hp.eps);
            }
        }
        Ok(())
    }
}
