use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::nn::{CategoricalDist, HeadGrads, Matrix, PolicyNet};
use crate::phasic::losses::{
    entropy, loss_aux, loss_clip, loss_clip_grad, loss_joint, loss_joint_grad, loss_kl_policy,
    loss_value, loss_value_grad, policy_loss, Surrogate,
};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

const OBS_DIM: usize = 3;
const ACTIONS: usize = 3;
const HIDDEN: [usize; 2] = [8, 8];
const BATCH: usize = 5;
const CLIP_EPS: f64 = 0.2;
const BETA: f64 = 1.0;

pub const LOSSES: [&str; 6] = ["clip", "value", "aux", "joint", "kl", "entropy"];

#[derive(Clone, Debug, PartialEq)]
pub struct LossCheck {
    pub loss: &'static str,
    pub instances: usize,
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|)` over
    /// instances, with vector 2-norms.
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub num_params: usize,
    pub checks: Vec<LossCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_error <= GRADCHECK_TOLERANCE)
    }
}

struct Case {
    obs: Matrix<f64>,
    actions: Vec<usize>,
    old: CategoricalDist<f64>,
    logp_old: Vec<f64>,
    adv: Vec<f64>,
    targets: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    scale * rng.sample::<f64, _>(StandardNormal)
}

fn make_case(net: &PolicyNet<f64>, rng: &mut ChaCha8Rng) -> Case {
    let obs = Matrix::from_vec(BATCH, OBS_DIM, (0..BATCH * OBS_DIM).map(|_| normal(rng, 1.0)).collect());
    let mut old_logits = net.logits(&obs).expect("shape");
    old_logits
        .as_mut_slice()
        .iter_mut()
        .for_each(|z| *z += normal(rng, 0.3));
    let old = CategoricalDist::new(old_logits);
    let actions: Vec<usize> = (0..BATCH).map(|_| rng.random_range(0..ACTIONS)).collect();
    let logp_old = old.log_prob(&actions).expect("actions in range");
    Case {
        obs,
        actions,
        old,
        logp_old,
        adv: (0..BATCH).map(|_| normal(rng, 1.0)).collect(),
        targets: (0..BATCH).map(|_| normal(rng, 1.0)).collect(),
        }
}

fn loss_only(net: &PolicyNet<f64>, c: &Case, loss: &str) -> f64 {
    let f = net.forward(&c.obs, false).expect("shape");
    let d = CategoricalDist::new(f.logits.clone());
    match loss {
        "clip" => loss_clip(&d.log_prob(&c.actions).unwrap(), &c.logp_old, &c.adv, CLIP_EPS).unwrap(),
        "value" => loss_value(f.value.as_ref().unwrap(), &c.targets),
        "aux" => loss_aux(&f.aux_value, &c.targets),
        "joint" => loss_joint(&f.aux_value, &c.targets, &c.old, &d, BETA),
        "kl" => loss_kl_policy(&c.actions, &c.adv, &c.old, &d, BETA).unwrap(),
        "entropy" => entropy(&d),
        _ => unreachable!("unknown loss {loss}"),
    }
}

fn analytic(net: &mut PolicyNet<f64>, c: &Case, loss: &str) -> Vec<f64> {
    let f = net.forward(&c.obs, false).expect("shape");
    let d = CategoricalDist::new(f.logits.clone());
    let mut g = HeadGrads::default();
    match loss {
        "clip" => {
            let out = loss_clip_grad(&d.log_prob(&c.actions).unwrap(), &c.logp_old, &c.adv, CLIP_EPS).unwrap();
            g.logits = Some(d.log_prob_grad(&c.actions, &out.dlogp));
        }
        "value" => g.value = Some(loss_value_grad(f.value.as_ref().unwrap(), &c.targets).1),
        "aux" => g.aux_value = Some(loss_value_grad(&f.aux_value, &c.targets).1),
        "joint" => {
            let j = loss_joint_grad(&f.aux_value, &c.targets, &c.old, &d, BETA);
            g.aux_value = Some(j.daux);
            g.logits = Some(j.dlogits);
        }
        "kl" => {
            let p = policy_loss(&d, &c.old, &c.actions, &c.logp_old, &c.adv, Surrogate::KlPenalty { beta: BETA }, 0.0)
                .unwrap();
            g.logits = Some(p.dlogits);
        }
        "entropy" => g.logits = Some(d.entropy_grad(&[1.0 / BATCH as f64; BATCH])),
        _ => unreachable!("unknown loss {loss}"),
    }
    net.params_mut().zero_grad();
    net.backward(&f, &g).expect("value head present");
    net.params().flat_grads()
}

fn numeric(net: &mut PolicyNet<f64>, c: &Case, loss: &str) -> Vec<f64> {
    let theta = net.params().flat_values();
    let mut out = Vec::with_capacity(theta.len());
    let mut probe = theta.clone();
    for j in 0..theta.len() {
        probe[j] = theta[j] + GRADCHECK_STEP;
        net.params_mut().set_flat_values(&probe);
        let up = loss_only(net, c, loss);
        probe[j] = theta[j] - GRADCHECK_STEP;
        net.params_mut().set_flat_values(&probe);
        let down = loss_only(net, c, loss);
        probe[j] = theta[j];
        out.push((up - down) / (2.0 * GRADCHECK_STEP));
    }
    net.params_mut().set_flat_values(&theta);
    out
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut n.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central finite differences against backprop for every loss, through a
/// small policy network with a true value head, on `instances` random
/// parameter/data draws.
pub fn gradcheck(seed: u64, instances: usize) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PolicyNet::<f64>::new(OBS_DIM, ACTIONS, &HIDDEN, true, &mut rng);
    let num_params = net.params().num_params();
    let mut checks: Vec<LossCheck> = LOSSES
        .iter()
        .map(|&loss| LossCheck {
            loss,
            instances,
            max_rel_error: 0.0,
        })
        .collect();
    for _ in 0..instances {
        let theta: Vec<f64> = (0..num_params).map(|_| normal(&mut rng, 0.5)).collect();
        net.params_mut().set_flat_values(&theta);
        let case = make_case(&net, &mut rng);
        for check in &mut checks {
            let a = analytic(&mut net, &case, check.loss);
            let n = numeric(&mut net, &case, check.loss);
            check.max_rel_error = check.max_rel_error.max(rel_error(&a, &n));
        }
    }
    GradcheckReport { num_params, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_net_and_all_losses_pass() {
        let r = gradcheck(7, 3);
        assert!(r.num_params <= 200, "{}", r.num_params);
        assert_eq!(r.checks.len(), LOSSES.len());
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let a = [1.0, 2.0];
        assert!(rel_error(&a, &[1.0, 2.0]) == 0.0);
        assert!(rel_error(&a, &[1.0, 2.1]) > GRADCHECK_TOLERANCE);
    }
}
