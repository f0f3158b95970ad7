//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use crate::rng;

/// Outcome of comparing analytic and numerical gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Index of the worst parameter.
    pub worst_index: usize,
}

/// Relative error between two gradient estimates; the floor keeps
/// vanishing gradients from producing spurious blow-ups.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compare `analytic` against central differences of `loss` on at least
/// `min_samples` parameters. Half the sample is drawn from parameters with a
/// nonzero analytic gradient, half uniformly.
pub fn grad_check<F>(
    params: &mut [f64],
    analytic: &[f64],
    mut loss: F,
    eps: f64,
    min_samples: usize,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut r = rng::stream_rng(seed, "gradcheck");
    let nonzero: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i] != 0.0).collect();
    let half = min_samples.div_ceil(2);
    let mut idx: Vec<usize> = sample(&mut r, nonzero.len(), half.min(nonzero.len()))
        .into_iter()
        .map(|i| nonzero[i])
        .collect();
    let target = min_samples.min(params.len());
    let chosen: std::collections::HashSet<usize> = idx.iter().copied().collect();
    let extra: Vec<usize> = sample(&mut r, params.len(), params.len().min(target * 2 + 16))
        .into_iter()
        .filter(|i| !chosen.contains(i))
        .take(target.saturating_sub(idx.len()))
        .collect();
    idx.extend(extra);
    idx.sort_unstable();
    let mut worst = (0.0, 0);
    for &i in &idx {
        let orig = params[i];
        params[i] = orig + eps;
        let up = loss(params);
        params[i] = orig - eps;
        let down = loss(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let e = relative_error(analytic[i], numeric);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        checked: idx.len(),
        worst_index: worst.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_quadratic_passes() {
        let mut p: Vec<f64> = (0..300).map(|i| (i as f64) * 0.01 - 1.0).collect();
        let g: Vec<f64> = p.iter().map(|x| 2.0 * x + 3.0).collect();
        let rep = grad_check(&mut p, &g, |x| x.iter().map(|v| v * v + 3.0 * v).sum(), 1e-4, 200, 1);
        assert!(rep.checked >= 200);
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut p = vec![1.0; 10];
        let g = vec![1.0; 10];
        let rep = grad_check(&mut p, &g, |x| x.iter().map(|v| v * v).sum(), 1e-4, 10, 1);
        assert!(rep.max_rel_error > 0.4);
    }
}
