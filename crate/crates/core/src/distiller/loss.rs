//! Distillation objective: `α·CE(y, ŷ) + (1−α)·(1/H)·Σ(h − ĥ)²`, with the
//! teacher vector `h` held constant.

use crate::error::{Error, Result};
use crate::neural::ce_loss;

#[derive(Debug, Clone, PartialEq)]
pub struct DistillLoss {
    pub loss: f64,
    pub ce: f64,
    pub mse: f64,
    /// Gradient w.r.t. the student's class probabilities.
    pub d_probs: Vec<f64>,
    /// Gradient w.r.t. the student's [CLS] vector.
    pub d_cls: Vec<f64>,
}

pub fn distill_loss(y: &[f64], y_hat: &[f64], h: &[f64], h_hat: &[f64], alpha: f64) -> Result<DistillLoss> {
    if h.len() != h_hat.len() || h.is_empty() {
        return Err(Error::Shape(format!(
            "teacher vector has {} entries, student vector {}",
            h.len(),
            h_hat.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    let (ce, d_ce) = ce_loss(y_hat, y)?;
    let n = h.len() as f64;
    let mse = h.iter().zip(h_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let loss = alpha * ce + (1.0 - alpha) * mse;
    let d_probs = d_ce.iter().map(|g| alpha * g).collect();
    let d_cls = h
        .iter()
        .zip(h_hat)
        .map(|(a, b)| (1.0 - alpha) * 2.0 * (b - a) / n)
        .collect();
    Ok(DistillLoss {
        loss,
        ce,
        mse,
        d_probs,
        d_cls,
    })
}
