//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn init<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, hyper: AdamHyper) -> Self
    where
        T: 'a,
    {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
            hyper,
        }
    }

    /// One update. `params` and `grads` pair up positionally with the tensors
    /// given to [`AdamState::init`]; the names are only used in errors.
    /// Nothing is modified unless every gradient is finite and shape-matched.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor<T>)], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam state tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), (g, m)) in params.iter().zip(grads.iter().zip(&self.m)) {
            if g.shape() != p.shape() || m.shape() != p.shape() {
                return Err(Error::shape(format!("adam step ({name})"), g.shape(), p.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NumericFault(format!("non-finite gradient for parameter {name}")));
            }
        }

        self.step += 1;
        let h = self.hyper;
        let t = self.step as i32;
        let c1 = 1.0 - h.beta1.powi(t);
        let c2 = 1.0 - h.beta2.powi(t);
        let (b1, b2) = (T::from_f64(h.beta1), T::from_f64(h.beta2));
        let (k1, k2) = (T::from_f64(1.0 - h.beta1), T::from_f64(1.0 - h.beta2));
        let step_size = T::from_f64(h.learning_rate / c1);
        let inv_c2_sqrt = T::from_f64(1.0 / c2.sqrt());
        let eps = T::from_f64(h.epsilon);

        for (((_, p), g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let p = p.data_mut();
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + k1 * gi;
                *vi = b2 * *vi + k2 * gi * gi;
                *pi -= step_size * *mi / ((*vi).sqrt() * inv_c2_sqrt + eps);
            }
        }
        Ok(())
    }
}
