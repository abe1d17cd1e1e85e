//! Scalar losses and their gradients. Every `*_grad` function returns the
//! same value as its plain counterpart plus the gradient of that value.

use thiserror::Error;

use crate::nn::{kl_divergence, kl_grad_wrt_new, CategoricalDist, Matrix, NnError};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(
        "probability ratio at sample {index} is not finite \
         (approx KL(old||new) = {approx_kl:.4e}); the policy moved too far or produced NaN"
    )]
    NonFiniteRatio { index: usize, approx_kl: f64 },
    #[error("{what}: expected length {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), LossError> {
    if expected == got {
        Ok(())
    } else {
        Err(LossError::Shape { what, expected, got })
    }
}

fn mean<T: Real>(xs: impl Iterator<Item = T>, n: usize) -> T {
    xs.sum::<T>() / T::c(n.max(1) as f64)
}

fn ratios<T: Real>(logp_new: &[T], logp_old: &[T]) -> Result<Vec<T>, LossError> {
    check_len("logp_old", logp_new.len(), logp_old.len())?;
    let r: Vec<T> = logp_new
        .iter()
        .zip(logp_old)
        .map(|(&n, &o)| (n - o).exp())
        .collect();
    if let Some(index) = r.iter().position(|x| !x.is_finite()) {
        let approx_kl = mean(logp_old.iter().zip(logp_new).map(|(&o, &n)| o - n), r.len());
        return Err(LossError::NonFiniteRatio {
            index,
            approx_kl: approx_kl.f64(),
        });
    }
    Ok(r)
}

/// Clipped surrogate objective (to be maximized):
/// `mean min(r A, clip(r, 1 - eps, 1 + eps) A)` with `r = exp(logp_new - logp_old)`.
pub fn loss_clip<T: Real>(logp_new: &[T], logp_old: &[T], adv: &[T], eps: T) -> Result<T, LossError> {
    loss_clip_grad(logp_new, logp_old, adv, eps).map(|o| o.objective)
}

#[derive(Clone, Debug)]
pub struct ClipOutput<T> {
    pub objective: T,
    /// d objective / d logp_new.
    pub dlogp: Vec<T>,
    /// Fraction of samples with `|r - 1| > eps`.
    pub clip_frac: T,
}

pub fn loss_clip_grad<T: Real>(
    logp_new: &[T],
    logp_old: &[T],
    adv: &[T],
    eps: T,
) -> Result<ClipOutput<T>, LossError> {
    let n = logp_new.len();
    check_len("advantages", n, adv.len())?;
    let r = ratios(logp_new, logp_old)?;
    let scale = T::one() / T::c(n.max(1) as f64);
    let (lo, hi) = (T::one() - eps, T::one() + eps);
    let mut objective = T::zero();
    let mut clipped = 0usize;
    let dlogp = r
        .iter()
        .zip(adv)
        .map(|(&r, &a)| {
            let unclipped = r * a;
            let bounded = r.max(lo).min(hi) * a;
            if r < lo || r > hi {
                clipped += 1;
            }
            if unclipped <= bounded {
                objective += unclipped;
                unclipped * scale
            } else {
                objective += bounded;
                T::zero()
            }
        })
        .collect();
    Ok(ClipOutput {
        objective: objective * scale,
        dlogp,
        clip_frac: T::c(clipped as f64) * scale,
    })
}

/// `mean 0.5 (pred - target)^2`.
pub fn loss_value<T: Real>(pred: &[T], target: &[T]) -> T {
    loss_value_grad(pred, target).0
}

/// Value and d/d pred of [`loss_value`].
pub fn loss_value_grad<T: Real>(pred: &[T], target: &[T]) -> (T, Vec<T>) {
    assert_eq!(pred.len(), target.len(), "prediction and target lengths differ");
    let n = T::c(pred.len().max(1) as f64);
    let half = T::c(0.5);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += half * d * d;
            d / n
        })
        .collect();
    (loss / n, grad)
}

/// Auxiliary value loss on the policy network's value head.
pub fn loss_aux<T: Real>(aux_pred: &[T], target: &[T]) -> T {
    loss_value(aux_pred, target)
}

/// `loss_aux + beta_clone * mean KL(frozen || current)`.
pub fn loss_joint<T: Real>(
    aux_pred: &[T],
    target: &[T],
    frozen: &CategoricalDist<T>,
    current: &CategoricalDist<T>,
    beta_clone: T,
) -> T {
    loss_joint_grad(aux_pred, target, frozen, current, beta_clone).loss
}

#[derive(Clone, Debug)]
pub struct JointOutput<T> {
    pub loss: T,
    pub aux_loss: T,
    /// Mean KL(frozen || current).
    pub clone_kl: T,
    pub daux: Vec<T>,
    pub dlogits: Matrix<T>,
}

pub fn loss_joint_grad<T: Real>(
    aux_pred: &[T],
    target: &[T],
    frozen: &CategoricalDist<T>,
    current: &CategoricalDist<T>,
    beta_clone: T,
) -> JointOutput<T> {
    let n = current.len();
    let (aux_loss, daux) = loss_value_grad(aux_pred, target);
    let kl = kl_divergence(frozen, current);
    let clone_kl = mean(kl.into_iter(), n);
    let w = vec![beta_clone / T::c(n.max(1) as f64); n];
    JointOutput {
        loss: aux_loss + beta_clone * clone_kl,
        aux_loss,
        clone_kl,
        daux,
        dlogits: kl_grad_wrt_new(frozen, current, &w),
    }
}

/// Fixed KL-penalty loss (to be minimized): `mean(-A r + beta_pi KL(old || new))`.
pub fn loss_kl_policy<T: Real>(
    actions: &[usize],
    adv: &[T],
    old: &CategoricalDist<T>,
    new: &CategoricalDist<T>,
    beta_pi: T,
) -> Result<T, LossError> {
    let logp_old = old.log_prob(actions)?;
    let logp_new = new.log_prob(actions)?;
    let r = ratios(&logp_new, &logp_old)?;
    check_len("advantages", r.len(), adv.len())?;
    let kl = kl_divergence(old, new);
    let n = r.len();
    Ok(mean(
        r.iter().zip(adv).zip(&kl).map(|((&r, &a), &k)| -a * r + beta_pi * k),
        n,
    ))
}

/// Mean per-row entropy.
pub fn entropy<T: Real>(dist: &CategoricalDist<T>) -> T {
    mean(dist.entropy().into_iter(), dist.len())
}

/// Which policy surrogate the policy phase optimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surrogate {
    Clip { eps: f64 },
    KlPenalty { beta: f64 },
}

/// Total policy-phase policy loss (to be minimized) and its logit gradient.
#[derive(Clone, Debug)]
pub struct PolicyLoss<T> {
    /// `surrogate_loss - entropy_coef * entropy`.
    pub loss: T,
    /// `-L_clip` or `L_kl`.
    pub surrogate_loss: T,
    pub entropy: T,
    pub clip_frac: T,
    /// Mean KL(old || new).
    pub approx_kl: T,
    pub dlogits: Matrix<T>,
}

pub fn policy_loss<T: Real>(
    new: &CategoricalDist<T>,
    old: &CategoricalDist<T>,
    actions: &[usize],
    logp_old: &[T],
    adv: &[T],
    surrogate: Surrogate,
    entropy_coef: f64,
) -> Result<PolicyLoss<T>, LossError> {
    let n = new.len();
    check_len("old policy rows", n, old.len())?;
    let logp_new = new.log_prob(actions)?;
    let kl = kl_divergence(old, new);
    let approx_kl = mean(kl.iter().copied(), n);
    let (surrogate_loss, clip_frac, mut dlogits) = match surrogate {
        Surrogate::Clip { eps } => {
            let out = loss_clip_grad(&logp_new, logp_old, adv, T::c(eps))?;
            let dlogp: Vec<T> = out.dlogp.iter().map(|&g| -g).collect();
            (-out.objective, out.clip_frac, new.log_prob_grad(actions, &dlogp))
        }
        Surrogate::KlPenalty { beta } => {
            let r = ratios(&logp_new, logp_old)?;
            check_len("advantages", n, adv.len())?;
            let inv_n = T::one() / T::c(n.max(1) as f64);
            let beta = T::c(beta);
            let loss = mean(
                r.iter().zip(adv).zip(&kl).map(|((&r, &a), &k)| -a * r + beta * k),
                n,
            );
            let dlogp: Vec<T> = r.iter().zip(adv).map(|(&r, &a)| -a * r * inv_n).collect();
            let mut g = new.log_prob_grad(actions, &dlogp);
            g.add_assign(&kl_grad_wrt_new(old, new, &vec![beta * inv_n; n]));
            (loss, T::zero(), g)
        }
    };
    let h = entropy(new);
    let c = T::c(entropy_coef);
    if c != T::zero() {
        let dh = vec![-c / T::c(n.max(1) as f64); n];
        dlogits.add_assign(&new.entropy_grad(&dh));
    }
    Ok(PolicyLoss {
        loss: surrogate_loss - c * h,
        surrogate_loss,
        entropy: h,
        clip_frac,
        approx_kl,
        dlogits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(rows: &[&[f64]]) -> CategoricalDist<f64> {
        let k = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        CategoricalDist::new(Matrix::from_vec(rows.len(), k, data))
    }

    #[test]
    fn clip_hand_values() {
        let l2 = 2f64.ln();
        let lh = 0.5f64.ln();
        let case = |lp: f64, a: f64| loss_clip_grad(&[lp], &[0.0], &[a], 0.2).unwrap();
        let o = case(l2, 1.0);
        assert!((o.objective - 1.2).abs() < 1e-12 && o.dlogp[0] == 0.0);
        let o = case(l2, -1.0);
        assert!((o.objective + 2.0).abs() < 1e-12 && (o.dlogp[0] + 2.0).abs() < 1e-12);
        let o = case(lh, 1.0);
        assert!((o.objective - 0.5).abs() < 1e-12 && (o.dlogp[0] - 0.5).abs() < 1e-12);
        let o = case(lh, -1.0);
        assert!((o.objective + 0.8).abs() < 1e-12 && o.dlogp[0] == 0.0);
        let both = loss_clip(&[l2, lh], &[0.0, 0.0], &[1.0, -1.0], 0.2).unwrap();
        assert!((both - 0.2).abs() < 1e-12);
        assert_eq!(case(l2, 1.0).clip_frac, 1.0);
        assert_eq!(case(0.1, 1.0).clip_frac, 0.0);
    }

    #[test]
    fn clip_equals_mean_advantage_on_policy() {
        let lp = [-0.3f64, -1.2, -2.0];
        let v = loss_clip(&lp, &lp, &[1.0, -2.0, 4.0], 0.2).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_ratio_reports_kl() {
        let e = loss_clip(&[800.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 0.2).unwrap_err();
        match e {
            LossError::NonFiniteRatio { index, approx_kl } => {
                assert_eq!(index, 0);
                assert!((approx_kl + 400.0).abs() < 1e-9);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(loss_clip(&[f64::NAN], &[0.0], &[1.0], 0.2).is_err());
    }

    #[test]
    fn value_hand_values() {
        assert_eq!(loss_value(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(loss_value(&[0.0, 0.0], &[2.0, 4.0]), 5.0);
        let (_, g) = loss_value_grad(&[0.0, 0.0], &[2.0, 4.0]);
        assert_eq!(g, vec![-1.0, -2.0]);
        assert_eq!(loss_aux(&[3.0], &[1.0]), 2.0);
    }

    #[test]
    fn joint_is_zero_at_clone_and_target() {
        let d = dist(&[&[0.3, -1.0, 2.0], &[0.0, 0.0, 0.0]]);
        let v = loss_joint(&[1.0, -1.0], &[1.0, -1.0], &d, &d, 1.0);
        assert!(v.abs() < 1e-15);
        let out = loss_joint_grad(&[1.0, -1.0], &[1.0, -1.0], &d, &d, 1.0);
        assert!(out.dlogits.as_slice().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn joint_kl_term_is_log_two_for_saturated_vs_uniform() {
        let frozen = dist(&[&[1000.0, 0.0]]);
        let current = dist(&[&[0.0, 0.0]]);
        let v = loss_joint(&[0.0], &[0.0], &frozen, &current, 3.0);
        assert!((v - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_policy_hand_values() {
        let d = dist(&[&[0.0, 0.0], &[1.0, -1.0]]);
        let v = loss_kl_policy(&[0, 1], &[2.0, -1.0], &d, &d, 1.0).unwrap();
        assert!((v - (-0.5)).abs() < 1e-12);
        let old = dist(&[&[1000.0, 0.0]]);
        let new = dist(&[&[0.0, 0.0]]);
        let v = loss_kl_policy(&[0], &[1.0], &old, &new, 2.0).unwrap();
        assert!((v - (-0.5 + 2.0 * 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_uniform() {
        let d = dist(&[&[0.0; 4], &[5.0; 4]]);
        assert!((entropy(&d) - 4f64.ln()).abs() < 1e-12);
    }

    fn fd_check(surrogate: Surrogate, logits: Vec<f64>, old: Vec<f64>, adv: Vec<f64>, actions: Vec<usize>) {
        let (n, k) = (adv.len(), logits.len() / adv.len());
        let old = CategoricalDist::new(Matrix::from_vec(n, k, old));
        let logp_old = old.log_prob(&actions).unwrap();
        let f = |l: &[f64]| {
            let d = CategoricalDist::new(Matrix::from_vec(n, k, l.to_vec()));
            policy_loss(&d, &old, &actions, &logp_old, &adv, surrogate, 0.05).unwrap()
        };
        let base = f(&logits);
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p[i] += h;
            let mut m = logits.clone();
            m[i] -= h;
            let num = (f(&p).loss - f(&m).loss) / (2.0 * h);
            let ana = base.dlogits.as_slice()[i];
            // Kinks in the clipped objective make FD meaningless right at the boundary.
            let at_kink = matches!(surrogate, Surrogate::Clip { .. })
                && (f(&p).clip_frac != f(&m).clip_frac);
            if !at_kink {
                assert!((num - ana).abs() < 1e-6 * (1.0 + num.abs()), "i={i} fd={num} an={ana}");
            }
        }
    }

    fn cases() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<usize>)> {
        (1usize..5, 2usize..5).prop_flat_map(|(n, k)| {
            (
                prop::collection::vec(-2.0..2.0f64, n * k),
                prop::collection::vec(-2.0..2.0f64, n * k),
                prop::collection::vec(-3.0..3.0f64, n),
                prop::collection::vec(0..k, n),
            )
        })
    }

    proptest! {
        #[test]
        fn clip_policy_gradient_matches_finite_differences((l, o, a, act) in cases()) {
            fd_check(Surrogate::Clip { eps: 0.2 }, l, o, a, act);
        }

        #[test]
        fn kl_policy_gradient_matches_finite_differences((l, o, a, act) in cases()) {
            fd_check(Surrogate::KlPenalty { beta: 1.0 }, l.clone(), o.clone(), a.clone(), act.clone());
            let n = a.len();
            let k = l.len() / n;
            let old = CategoricalDist::new(Matrix::from_vec(n, k, o));
            let new = CategoricalDist::new(Matrix::from_vec(n, k, l));
            let lpo = old.log_prob(&act).unwrap();
            let pl = policy_loss(&new, &old, &act, &lpo, &a, Surrogate::KlPenalty { beta: 1.0 }, 0.0).unwrap();
            let direct = loss_kl_policy(&act, &a, &old, &new, 1.0).unwrap();
            prop_assert!((pl.loss - direct).abs() < 1e-12);
        }

        #[test]
        fn clip_objective_never_exceeds_unclipped(
            lp in prop::collection::vec(-3.0..0.0f64, 1..20),
            eps in 0.05..0.5f64,
        ) {
            let old: Vec<f64> = lp.iter().map(|x| x * 0.7).collect();
            let adv: Vec<f64> = lp.iter().enumerate().map(|(i, x)| if i % 2 == 0 { *x } else { -x }).collect();
            let c = loss_clip(&lp, &old, &adv, eps).unwrap();
            let unclipped: f64 = lp.iter().zip(&old).zip(&adv)
                .map(|((n, o), a)| (n - o).exp() * a).sum::<f64>() / lp.len() as f64;
            prop_assert!(c <= unclipped + 1e-12);
        }
    }
}
