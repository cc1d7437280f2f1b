use serde::{Deserialize, Serialize};

use super::params::{Grads, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments, one pair per named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(String, Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `(name, first moment, second moment)`; empty before the first update.
    pub fn moments(&self) -> &[(String, Tensor<T>, Tensor<T>)] {
        &self.moments
    }

    pub(crate) fn restore(&mut self, step: u64, moments: Vec<(String, Tensor<T>, Tensor<T>)>) {
        self.step = step;
        self.moments = moments;
    }

    pub fn step<M: Parameterized<T> + ?Sized>(&mut self, model: &mut M, grads: &Grads<T>) -> Result<()> {
        self.apply(model.parameters_mut(), grads)
    }

    pub fn apply(&mut self, params: Vec<(String, &mut Tensor<T>)>, grads: &Grads<T>) -> Result<()> {
        if params.len() != grads.entries.len() {
            return Err(Error::shape(
                format!("{} gradient tensors", params.len()),
                format!("{}", grads.entries.len()),
            ));
        }
        for ((pn, p), (gn, g)) in params.iter().zip(&grads.entries) {
            if pn != gn || p.shape() != g.shape() {
                return Err(Error::shape(
                    format!("gradient for {pn} {:?}", p.shape()),
                    format!("{gn} {:?}", g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {pn}")));
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(n, p)| (n.clone(), Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
                .collect();
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(c.lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(c.eps);
        for ((_, p), ((_, g), (_, m, v))) in params
            .into_iter()
            .zip(grads.entries.iter().zip(self.moments.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv = *pv - step_size * *mv / (vv.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
