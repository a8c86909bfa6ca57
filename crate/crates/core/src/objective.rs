//! Negative log-likelihood and the combined training objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_floor, Scalar};

pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Trade-off weights of the discriminative terms. The soft-attention
/// variant uses only `lambda1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub fn same(lambda: f64) -> Self {
        Self {
            lambda1: lambda,
            lambda2: lambda,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::same(DEFAULT_LAMBDA)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub nll: T,
    pub dis1: T,
    /// Zero for the soft-attention variant.
    pub dis2: T,
    pub total: T,
    pub lambda1: T,
    pub lambda2: T,
    pub token_nll: Vec<T>,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn recomputed_total(&self) -> T {
        self.nll + self.lambda1 * self.dis1 + self.lambda2 * self.dis2
    }

    /// Mean of the per-token terms; after [`LossBreakdown::mean`] this
    /// averages over every token of every caption.
    pub fn per_token_nll(&self) -> T {
        if self.token_nll.is_empty() {
            return T::zero();
        }
        let sum = self.token_nll.iter().fold(T::zero(), |a, b| a + *b);
        sum / T::from_usize(self.token_nll.len()).unwrap()
    }

    /// Component-wise mean over pairs; `token_nll` is concatenated.
    pub fn mean(items: &[LossBreakdown<T>]) -> Option<LossBreakdown<T>> {
        let first = items.first()?;
        let n = T::from_usize(items.len()).unwrap();
        let sum = |f: fn(&LossBreakdown<T>) -> T| items.iter().map(f).fold(T::zero(), |a, b| a + b) / n;
        Some(LossBreakdown {
            nll: sum(|l| l.nll),
            dis1: sum(|l| l.dis1),
            dis2: sum(|l| l.dis2),
            total: sum(|l| l.total),
            lambda1: first.lambda1,
            lambda2: first.lambda2,
            token_nll: items.iter().flat_map(|l| l.token_nll.iter().copied()).collect(),
        })
    }
}

/// `−Σ_t ln p_t[target_t]` with each probability clamped at `1e-300`.
pub fn nll_loss<T: Scalar>(distributions: &[Vec<T>], targets: &[usize]) -> Result<(T, Vec<T>)> {
    if distributions.len() != targets.len() {
        return Err(Error::Input(format!(
            "{} distributions for {} targets",
            distributions.len(),
            targets.len()
        )));
    }
    let floor = log_floor::<T>();
    let mut per = Vec::with_capacity(targets.len());
    for (p, &y) in distributions.iter().zip(targets) {
        let py = *p.get(y).ok_or(Error::Index {
            what: "distribution",
            index: y,
            size: p.len(),
        })?;
        per.push(-py.max(floor).ln());
    }
    let total = per.iter().fold(T::zero(), |a, b| a + *b);
    Ok((total, per))
}

pub fn total_loss_soft<T: Scalar>(nll: T, dis: T, lambda: T) -> LossBreakdown<T> {
    LossBreakdown {
        nll,
        dis1: dis,
        dis2: T::zero(),
        total: nll + lambda * dis,
        lambda1: lambda,
        lambda2: T::zero(),
        token_nll: Vec::new(),
    }
}

pub fn total_loss_review<T: Scalar>(nll: T, dis1: T, dis2: T, lambda1: T, lambda2: T) -> LossBreakdown<T> {
    LossBreakdown {
        nll,
        dis1,
        dis2,
        total: nll + lambda1 * dis1 + lambda2 * dis2,
        lambda1,
        lambda2,
        token_nll: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nll_examples() {
        let uniform = vec![vec![0.25; 4]; 2];
        let (l, per) = nll_loss(&uniform, &[0, 3]).unwrap();
        assert!((l - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((l - 2.7726).abs() < 1e-4);
        assert_eq!(per.len(), 2);

        let sure = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(nll_loss(&sure, &[1, 0]).unwrap().0, 0.0);

        assert!(matches!(nll_loss(&vec![vec![1.0]; 3], &[0, 0]), Err(Error::Input(_))));
        let (l, _) = nll_loss::<f64>(&[vec![0.0, 1.0]], &[0]).unwrap();
        assert!(l.is_finite());
    }

    #[test]
    fn combined_objectives() {
        assert_eq!(total_loss_soft(1.5, 0.7, 0.0).total, 1.5);
        assert_eq!(total_loss_soft(1.0, 0.5, DEFAULT_LAMBDA).total, 6.0);
        assert_eq!(total_loss_review(2.0, 0.1, 0.1, 0.0, 0.0).total, 2.0);
        let r = total_loss_review::<f64>(2.0, 0.1, 0.1, 10.0, 10.0);
        assert!((r.total - 4.0).abs() < 1e-12);
        assert!((r.total - r.recomputed_total()).abs() <= 1e-12);
        let w = LossWeights::default();
        assert_eq!(w.lambda1, w.lambda2);
        assert_eq!(w.lambda1, 10.0);
    }

    #[test]
    fn breakdown_mean() {
        let a = total_loss_soft(1.0, 0.0, 10.0);
        let b = total_loss_soft(3.0, 1.0, 10.0);
        let m = LossBreakdown::mean(&[a, b]).unwrap();
        assert_eq!((m.nll, m.dis1, m.total), (2.0, 0.5, 7.0));
        assert!(LossBreakdown::<f64>::mean(&[]).is_none());
    }

    #[test]
    fn per_token_mean_spans_captions() {
        let mut a = total_loss_soft(1.0f64, 0.0, 10.0);
        a.token_nll = vec![1.0];
        let mut b = total_loss_soft(6.0, 0.0, 10.0);
        b.token_nll = vec![2.0, 4.0];
        assert_eq!(b.per_token_nll(), 3.0);
        let m = LossBreakdown::mean(&[a, b]).unwrap();
        assert!((m.per_token_nll() - 7.0 / 3.0).abs() < 1e-15);
    }
}
