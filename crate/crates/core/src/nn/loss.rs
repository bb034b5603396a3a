//! Scalar loss primitives, each returning the loss and its gradient with
//! respect to the prediction.

use super::tensor::{lit, Real};
use crate::error::{Error, Result};

pub const DISTRIBUTION_TOL: f64 = 1e-5;

pub fn check_distribution<S: Real>(p: &[S]) -> Result<()> {
    let sum: f64 = p.iter().map(|v| v.to_f64().unwrap()).sum();
    if p.iter().any(|&v| v < S::zero() || !v.is_finite()) || (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::InvalidDistribution { sum });
    }
    Ok(())
}

pub fn log_softmax<S: Real>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<S>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax<S: Real>(logits: &[S]) -> Vec<S> {
    log_softmax(logits).into_iter().map(S::exp).collect()
}

/// `-log softmax(logits)[target]`.
pub fn softmax_cross_entropy<S: Real>(logits: &[S], target: usize) -> (S, Vec<S>) {
    assert!(target < logits.len(), "target class out of range");
    let logp = log_softmax(logits);
    let mut grad: Vec<S> = logp.iter().map(|&l| l.exp()).collect();
    grad[target] -= S::one();
    (-logp[target], grad)
}

/// `KL(p || q) = sum p log(p / q)` with `0 log 0 = 0`.
pub fn kl_divergence<S: Real>(p: &[S], q: &[S]) -> Result<S> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!("KL over {} vs {} classes", p.len(), q.len())));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > S::zero())
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum())
}

/// `KL(target || softmax(logits))`; gradient is `softmax(logits) - target`.
pub fn softmax_kl<S: Real>(target: &[S], logits: &[S]) -> Result<(S, Vec<S>)> {
    if target.len() != logits.len() {
        return Err(Error::ShapeMismatch(format!(
            "soft label over {} classes, logits over {}",
            target.len(),
            logits.len()
        )));
    }
    check_distribution(target)?;
    let logp = log_softmax(logits);
    let mut loss = S::zero();
    for (&t, &l) in target.iter().zip(&logp) {
        if t > S::zero() {
            loss += t * (t.ln() - l);
        }
    }
    let grad = logp.iter().zip(target).map(|(&l, &t)| l.exp() - t).collect();
    Ok((loss, grad))
}

/// Squared Euclidean distance `||pred - target||^2`.
pub fn l2_loss<S: Real>(pred: &[S], target: &[S]) -> (S, Vec<S>) {
    assert_eq!(pred.len(), target.len(), "l2 loss length");
    let two = lit::<S>(2.0);
    let grad: Vec<S> = pred.iter().zip(target).map(|(&p, &t)| two * (p - t)).collect();
    let loss = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    (loss, grad)
}

pub fn sigmoid<S: Real>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Binary cross-entropy on a logit, computed stably. Returns `(loss, dloss/dlogit)`.
pub fn sigmoid_bce<S: Real>(logit: S, label: bool) -> (S, S) {
    let y = if label { S::one() } else { S::zero() };
    let loss = logit.max(S::zero()) - logit * y + (S::one() + (-logit.abs()).exp()).ln();
    (loss, sigmoid(logit) - y)
}

/// Mean binary cross-entropy of probabilities `scores` against `labels`.
pub fn binary_cross_entropy(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| if y { -s.ln() } else { -(1.0 - s).ln() })
        .sum();
    total / scores.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kl_of_identical_is_zero() {
        let p = [0.1, 0.2, 0.3, 0.4f64];
        assert_abs_diff_eq!(kl_divergence(&p, &p).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_against_one_hot_is_cross_entropy() {
        let q = [0.25, 0.5, 0.125, 0.125f64];
        let kl = kl_divergence(&[0.0, 1.0, 0.0, 0.0], &q).unwrap();
        assert_abs_diff_eq!(kl, -(0.5f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn kl_rejects_unnormalized_target() {
        assert!(matches!(
            softmax_kl(&[0.5, 0.4f64], &[0.0, 0.0]),
            Err(Error::InvalidDistribution { .. })
        ));
    }

    #[test]
    fn softmax_kl_matches_ce_on_one_hot() {
        let logits = [0.3, -1.2, 2.0, 0.7f32];
        let (ce, g1) = softmax_cross_entropy(&logits, 2);
        let (kl, g2) = softmax_kl(&[0.0, 0.0, 1.0, 0.0], &logits).unwrap();
        assert_eq!(ce, kl);
        assert_eq!(g1, g2);
    }

    #[test]
    fn ce_vanishes_for_dominant_logit() {
        let (loss, _) = softmax_cross_entropy(&[0.0, 60.0, 0.0f64], 1);
        assert!(loss < 1e-25);
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_loss(&[1.0, 2.0f64], &[1.0, 2.0]).0, 0.0);
        assert_eq!(l2_loss(&[3.0, 4.0f64], &[0.0, 0.0]).0, 25.0);
    }

    #[test]
    fn bce_examples() {
        assert_abs_diff_eq!(sigmoid_bce(0.0f64, true).0, 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(binary_cross_entropy(&[0.5], &[true]), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            binary_cross_entropy(&[0.9, 0.1], &[true, false]),
            -0.5 * (0.9f64.ln() + 0.9f64.ln()),
            epsilon = 1e-15
        );
        assert!(sigmoid_bce(40.0f64, true).0 < 1e-15);
        assert!(sigmoid_bce(-800.0f64, false).0.is_finite());
    }
}
