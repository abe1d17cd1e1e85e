use rand::Rng;

use crate::nn::{Linear, Matrix, Mlp, NnError, ParameterSet};
use crate::real::Real;

const POLICY_HEAD_GAIN: f64 = 0.01;
const VALUE_HEAD_GAIN: f64 = 1.0;

/// Policy network: tanh MLP torso with an action-logit head and an auxiliary
/// value head. The single-network variants add a true value head on the
/// same torso.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet<T> {
    params: ParameterSet<T>,
    torso: Mlp,
    logits: Linear,
    aux_value: Linear,
    value: Option<Linear>,
    num_actions: usize,
}

/// Output of a recorded forward pass.
#[derive(Clone, Debug)]
pub struct PolicyForward<T> {
    acts: Vec<Matrix<T>>,
    pub logits: Matrix<T>,
    pub aux_value: Vec<T>,
    pub value: Option<Vec<T>>,
    /// When set, the true value head's gradient stops at the torso output.
    pub detach_value: bool,
}

impl<T> PolicyForward<T> {
    pub fn features(&self) -> &Matrix<T> {
        self.acts.last().unwrap()
    }
}

/// Upstream gradients for each head. `None` means the head is not part of
/// the loss.
#[derive(Clone, Debug, Default)]
pub struct HeadGrads<T> {
    pub logits: Option<Matrix<T>>,
    pub aux_value: Option<Vec<T>>,
    pub value: Option<Vec<T>>,
}

impl<T: Real> PolicyNet<T> {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_actions: usize,
        hidden: &[usize],
        with_value_head: bool,
        rng: &mut R,
    ) -> Self {
        let mut params = ParameterSet::new();
        let torso = Mlp::new(&mut params, "torso", obs_dim, hidden, rng);
        let d = torso.out_dim();
        let logits = Linear::new(&mut params, "logits", d, num_actions, POLICY_HEAD_GAIN, rng);
        let aux_value = Linear::new(&mut params, "aux_value", d, 1, VALUE_HEAD_GAIN, rng);
        let value = with_value_head
            .then(|| Linear::new(&mut params, "value", d, 1, VALUE_HEAD_GAIN, rng));
        Self {
            params,
            torso,
            logits,
            aux_value,
            value,
            num_actions,
        }
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn obs_dim(&self) -> usize {
        self.torso.in_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn has_value_head(&self) -> bool {
        self.value.is_some()
    }

    /// Indices of the tensors that belong to the shared torso.
    pub fn torso_tensors(&self) -> Vec<usize> {
        self.torso
            .layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    pub fn forward(&self, obs: &Matrix<T>, detach_value: bool) -> Result<PolicyForward<T>, NnError> {
        if obs.cols() != self.obs_dim() {
            return Err(NnError::ShapeMismatch {
                what: "observation width",
                expected: self.obs_dim(),
                got: obs.cols(),
            });
        }
        let acts = self.torso.forward(&self.params, obs);
        let feat = acts.last().unwrap();
        let logits = self.logits.forward(&self.params, feat);
        let aux_value = self.aux_value.forward(&self.params, feat).into_vec();
        let value = self
            .value
            .as_ref()
            .map(|h| h.forward(&self.params, feat).into_vec());
        Ok(PolicyForward {
            acts,
            logits,
            aux_value,
            value,
            detach_value,
        })
    }

    /// Logits only, without keeping activations around for backward.
    pub fn logits(&self, obs: &Matrix<T>) -> Result<Matrix<T>, NnError> {
        Ok(self.forward(obs, false)?.logits)
    }

    /// Accumulates gradients of the heads in `grads` into the parameter set.
    pub fn backward(&mut self, fwd: &PolicyForward<T>, grads: &HeadGrads<T>) -> Result<(), NnError> {
        let feat = fwd.features();
        let mut d_feat: Option<Matrix<T>> = None;
        let mut add = |d: Option<Matrix<T>>| {
            if let Some(d) = d {
                match d_feat.as_mut() {
                    Some(acc) => acc.add_assign(&d),
                    None => d_feat = Some(d),
                }
            }
        };
        if let Some(dl) = &grads.logits {
            add(self.logits.backward(&mut self.params, feat, dl, true));
        }
        if let Some(da) = &grads.aux_value {
            let da = Matrix::from_vec(da.len(), 1, da.clone());
            add(self.aux_value.backward(&mut self.params, feat, &da, true));
        }
        if let Some(dv) = &grads.value {
            let head = self.value.as_ref().ok_or(NnError::MissingValueHead)?;
            let dv = Matrix::from_vec(dv.len(), 1, dv.clone());
            add(head.backward(&mut self.params, feat, &dv, !fwd.detach_value));
        }
        if let Some(d) = d_feat {
            self.torso.backward(&mut self.params, &fwd.acts, d);
        }
        Ok(())
    }
}

/// Value network: its own tanh MLP torso and a scalar head.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet<T> {
    params: ParameterSet<T>,
    torso: Mlp,
    head: Linear,
}

#[derive(Clone, Debug)]
pub struct ValueForward<T> {
    acts: Vec<Matrix<T>>,
    pub value: Vec<T>,
}

impl<T: Real> ValueNet<T> {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut params = ParameterSet::new();
        let torso = Mlp::new(&mut params, "torso", obs_dim, hidden, rng);
        let head = Linear::new(&mut params, "value", torso.out_dim(), 1, VALUE_HEAD_GAIN, rng);
        Self {
            params,
            torso,
            head,
        }
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn obs_dim(&self) -> usize {
        self.torso.in_dim
    }

    pub fn forward(&self, obs: &Matrix<T>) -> Result<ValueForward<T>, NnError> {
        if obs.cols() != self.obs_dim() {
            return Err(NnError::ShapeMismatch {
                what: "observation width",
                expected: self.obs_dim(),
                got: obs.cols(),
            });
        }
        let acts = self.torso.forward(&self.params, obs);
        let value = self.head.forward(&self.params, acts.last().unwrap()).into_vec();
        Ok(ValueForward { acts, value })
    }

    pub fn backward(&mut self, fwd: &ValueForward<T>, dvalue: &[T]) {
        let dv = Matrix::from_vec(dvalue.len(), 1, dvalue.to_vec());
        if let Some(d) = self
            .head
            .backward(&mut self.params, fwd.acts.last().unwrap(), &dv, true)
        {
            self.torso.backward(&mut self.params, &fwd.acts, d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(hidden: &[usize], value_head: bool) -> PolicyNet<f64> {
        PolicyNet::new(3, 4, hidden, value_head, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn zero_weights_give_uniform_logits_and_zero_values() {
        let mut n = net(&[5, 5], true);
        n.params_mut().fill(0.0);
        let obs = Matrix::from_vec(2, 3, vec![0.3, -1.0, 2.0, 1.0, 1.0, 1.0]);
        let out = n.forward(&obs, false).unwrap();
        assert!(out.logits.as_slice().iter().all(|&x| x == 0.0));
        assert!(out.aux_value.iter().all(|&x| x == 0.0));
        assert!(out.value.unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn no_hidden_layers_is_affine() {
        // 2 inputs, 2 actions, no torso: logits = x W + b.
        let mut n = PolicyNet::<f64>::new(2, 2, &[], false, &mut ChaCha8Rng::seed_from_u64(0));
        let w = n.params().find("logits.weight").unwrap().name.clone();
        let idx = n.params().tensors().iter().position(|t| t.name == w).unwrap();
        n.params_mut().tensor_mut(idx).value = vec![2.0, -1.0, 0.5, 3.0];
        n.params_mut().tensor_mut(idx + 1).value = vec![0.25, 0.0];
        let obs = Matrix::from_vec(1, 2, vec![1.0, 2.0]);
        let out = n.forward(&obs, false).unwrap();
        // [1*2 + 2*0.5 + 0.25, 1*(-1) + 2*3 + 0] = [3.25, 5]
        assert_eq!(out.logits.as_slice(), &[3.25, 5.0]);
    }

    #[test]
    fn wrong_observation_width_is_an_error() {
        let n = net(&[4], false);
        let obs = Matrix::zeros(1, 5);
        assert!(matches!(
            n.forward(&obs, false),
            Err(NnError::ShapeMismatch { expected: 3, got: 5, .. })
        ));
    }

    #[test]
    fn detached_value_grad_leaves_torso_untouched() {
        let mut n = net(&[4, 4], true);
        let obs = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]);
        let fwd = n.forward(&obs, true).unwrap();
        n.backward(
            &fwd,
            &HeadGrads {
                value: Some(vec![1.0, -2.0]),
                ..Default::default()
            },
        )
        .unwrap();
        for id in n.torso_tensors() {
            let t = n.params().tensor(id);
            assert!(!t.touched);
            assert!(t.grad.iter().all(|g| g.to_bits() == 0));
        }
        assert!(n.params().find("value.weight").unwrap().touched);

        n.params_mut().zero_grad();
        let fwd = n.forward(&obs, false).unwrap();
        n.backward(
            &fwd,
            &HeadGrads {
                value: Some(vec![1.0, -2.0]),
                ..Default::default()
            },
        )
        .unwrap();
        let torso_grad: f64 = n
            .torso_tensors()
            .iter()
            .flat_map(|&id| n.params().tensor(id).grad.clone())
            .map(f64::abs)
            .sum();
        assert!(torso_grad > 0.0);
    }

    #[test]
    fn value_grad_without_value_head_is_an_error() {
        let mut n = net(&[4], false);
        let fwd = n.forward(&Matrix::zeros(1, 3), false).unwrap();
        let g = HeadGrads {
            value: Some(vec![1.0]),
            ..Default::default()
        };
        assert!(matches!(n.backward(&fwd, &g), Err(NnError::MissingValueHead)));
    }
}
