//! Loss primitives shared by the training stages.

use super::ops::PROB_EPS;
use crate::error::{Error, Result};

/// Cross-entropy `-Σ y_i ln ŷ_i` and its gradient with respect to `ŷ`.
/// Probabilities below [`PROB_EPS`] are clamped inside the logarithm (and
/// receive no gradient).
pub fn ce_loss(probs: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if probs.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} probabilities against {} targets",
            probs.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for ((&p, &y), g) in probs.iter().zip(target).zip(grad.iter_mut()) {
        if y == 0.0 {
            continue;
        }
        if p > PROB_EPS {
            loss -= y * p.ln();
            *g = -y / p;
        } else {
            loss -= y * PROB_EPS.ln();
        }
    }
    Ok((loss, grad))
}

/// Chain a gradient on softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(d_probs).map(|(p, d)| p * d).sum();
    probs
        .iter()
        .zip(d_probs)
        .map(|(p, d)| p * (d - inner))
        .collect()
}

pub fn one_hot(index: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    v
}
