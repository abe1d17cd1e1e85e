use rand::Rng;

use crate::nn::{Matrix, NnError};
use crate::real::Real;

/// Batch of categorical distributions parameterized by logits, one row per
/// state. Log-probabilities come from a max-shifted log-softmax.
#[derive(Clone, Debug)]
pub struct CategoricalDist<T> {
    logits: Matrix<T>,
    log_probs: Matrix<T>,
}

impl<T: Real> CategoricalDist<T> {
    pub fn new(logits: Matrix<T>) -> Self {
        let mut log_probs = logits.clone();
        for r in 0..log_probs.rows() {
            let row = log_probs.row_mut(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|z| *z -= lse);
        }
        Self { logits, log_probs }
    }

    pub fn logits(&self) -> &Matrix<T> {
        &self.logits
    }

    pub fn log_probs(&self) -> &Matrix<T> {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_actions(&self) -> usize {
        self.logits.cols()
    }

    pub fn probs(&self) -> Matrix<T> {
        let mut p = self.log_probs.clone();
        p.as_mut_slice().iter_mut().for_each(|x| *x = x.exp());
        p
    }

    pub fn log_prob(&self, actions: &[usize]) -> Result<Vec<T>, NnError> {
        if actions.len() != self.len() {
            return Err(NnError::ShapeMismatch {
                what: "action count",
                expected: self.len(),
                got: actions.len(),
            });
        }
        actions
            .iter()
            .enumerate()
            .map(|(r, &a)| {
                if a >= self.num_actions() {
                    Err(NnError::ActionOutOfRange {
                        row: r,
                        action: a,
                        num_actions: self.num_actions(),
                    })
                } else {
                    Ok(self.log_probs.get(r, a))
                }
            })
            .collect()
    }

    pub fn entropy(&self) -> Vec<T> {
        (0..self.len())
            .map(|r| {
                -self
                    .log_probs
                    .row(r)
                    .iter()
                    .map(|&lp| lp.exp() * lp)
                    .sum::<T>()
            })
            .collect()
    }

    /// Per-row KL(self || other).
    pub fn kl(&self, other: &CategoricalDist<T>) -> Vec<T> {
        kl_divergence(self, other)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.len())
            .map(|r| {
                let u = T::c(rng.random::<f64>());
                let mut acc = T::zero();
                let row = self.log_probs.row(r);
                for (a, &lp) in row.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        return a;
                    }
                }
                // u landed in the rounding gap above the cumulative sum
                row.len() - 1
            })
            .collect()
    }

    /// Gradient wrt logits of `sum_r dlogp[r] * log p(actions[r] | r)`.
    pub fn log_prob_grad(&self, actions: &[usize], dlogp: &[T]) -> Matrix<T> {
        let mut g = self.probs();
        for (r, (&a, &d)) in actions.iter().zip(dlogp).enumerate() {
            let row = g.row_mut(r);
            row.iter_mut().for_each(|p| *p = -*p * d);
            row[a] += d;
        }
        g
    }

    /// Gradient wrt logits of `sum_r dh[r] * H_r`.
    pub fn entropy_grad(&self, dh: &[T]) -> Matrix<T> {
        let h = self.entropy();
        let mut g = Matrix::zeros(self.len(), self.num_actions());
        for r in 0..self.len() {
            let lp = self.log_probs.row(r);
            for (gk, &l) in g.row_mut(r).iter_mut().zip(lp) {
                *gk = -dh[r] * l.exp() * (l + h[r]);
            }
        }
        g
    }
}

/// Per-row KL(p_old || q_new) = sum_k p_k (log p_k - log q_k).
pub fn kl_divergence<T: Real>(p_old: &CategoricalDist<T>, q_new: &CategoricalDist<T>) -> Vec<T> {
    assert_eq!(p_old.num_actions(), q_new.num_actions());
    assert_eq!(p_old.len(), q_new.len());
    (0..p_old.len())
        .map(|r| {
            p_old
                .log_probs
                .row(r)
                .iter()
                .zip(q_new.log_probs.row(r))
                .map(|(&lp, &lq)| {
                    let p = lp.exp();
                    if p == T::zero() {
                        T::zero()
                    } else {
                        p * (lp - lq)
                    }
                })
                .sum()
        })
        .collect()
}

/// Gradient wrt the new logits of `sum_r dkl[r] * KL(p_old_r || q_new_r)`,
/// which is `dkl * (q - p_old)`.
pub fn kl_grad_wrt_new<T: Real>(
    p_old: &CategoricalDist<T>,
    q_new: &CategoricalDist<T>,
    dkl: &[T],
) -> Matrix<T> {
    let mut g = q_new.probs();
    let p = p_old.probs();
    for r in 0..g.rows() {
        for (gk, &pk) in g.row_mut(r).iter_mut().zip(p.row(r)) {
            *gk = dkl[r] * (*gk - pk);
        }
    }
    g
}
