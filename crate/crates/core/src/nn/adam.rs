use serde::{Deserialize, Serialize};

use crate::nn::{NnError, ParameterSet};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter set.
///
/// Tensors whose gradient was not written by the last backward pass are
/// skipped entirely (no moment decay, no step count), so a loss that does
/// not reach a tensor leaves it bitwise unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Per-tensor update counts used for bias correction.
    pub tensor_steps: Vec<u64>,
    /// Number of `step` calls.
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParameterSet<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            tensor_steps: vec![0; params.len()],
            t: 0,
            config,
        }
    }

    /// Applies one update using the gradients currently in `params`.
    pub fn step(&mut self, params: &mut ParameterSet<T>, lr: T) -> Result<(), NnError> {
        if !params.any_touched() {
            return Err(NnError::EmptyGradients);
        }
        params.check_finite_grads()?;
        self.t += 1;
        let b1 = T::c(self.config.beta1);
        let b2 = T::c(self.config.beta2);
        let eps = T::c(self.config.eps);
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            if !tensor.touched {
                continue;
            }
            self.tensor_steps[i] += 1;
            let k = self.tensor_steps[i] as i32;
            let c1 = T::one() - b1.powi(k);
            let c2 = T::one() - b2.powi(k);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((p, &g), (mi, vi)) in tensor
                .value
                .iter_mut()
                .zip(&tensor.grad)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        if !params.all_finite() {
            return Err(NnError::NonFiniteParameters);
        }
        Ok(())
    }
}
