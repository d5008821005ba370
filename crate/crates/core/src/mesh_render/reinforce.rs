use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NOISE_SCALE: f64 = 0.02;
pub const DEFAULT_SAMPLES: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    LeaveOneOut,
    None,
}

/// Score-function estimate of `∇ E[loss(p + σε)]` from `k` perturbations,
/// each weighted by its loss minus the mean loss of the other samples.
pub fn reinforce_grad(
    loss_fn: impl FnMut(&[f64]) -> Result<f64>,
    p: &[f64],
    k: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    reinforce_grad_with(loss_fn, p, k, noise_scale, seed, Baseline::LeaveOneOut)
}

pub fn reinforce_grad_with(
    mut loss_fn: impl FnMut(&[f64]) -> Result<f64>,
    p: &[f64],
    k: usize,
    noise_scale: f64,
    seed: u64,
    baseline: Baseline,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "score-function estimator needs at least 2 samples, got {k}"
        )));
    }
    if !(noise_scale > 0.0 && noise_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise scale {noise_scale} must be positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = Vec::with_capacity(k);
    let mut losses = Vec::with_capacity(k);
    let mut q = vec![0.0; p.len()];
    for _ in 0..k {
        let e: Vec<f64> = (0..p.len()).map(|_| rng.sample(StandardNormal)).collect();
        for ((qi, pi), ei) in q.iter_mut().zip(p).zip(&e) {
            *qi = pi + noise_scale * ei;
        }
        losses.push(loss_fn(&q)?);
        eps.push(e);
    }
    let mut grad = vec![0.0; p.len()];
    for (i, e) in eps.iter().enumerate() {
        let signal = match baseline {
            // differences first so that equal losses cancel exactly
            Baseline::LeaveOneOut => {
                losses
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, l)| losses[i] - l)
                    .sum::<f64>()
                    / (k - 1) as f64
            }
            Baseline::None => losses[i],
        };
        for (g, ei) in grad.iter_mut().zip(e) {
            *g += signal * ei;
        }
    }
    let scale = 1.0 / (noise_scale * k as f64);
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}
