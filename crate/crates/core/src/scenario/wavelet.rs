//! Capacity-plan sampling on a truncated Haar wavelet basis: random Gaussian
//! coefficients over dyadic blocks give piecewise-constant plans with
//! controlled temporal variation, rescaled to the target level and clamped
//! at zero (rescale first, then clamp).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPlan {
    pub values: Vec<f64>,
}

impl CapacityPlan {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

/// Haar synthesis over the next power of two >= `t_len`, truncated. When the
/// horizon is not a power of two the trailing partial block simply inherits
/// the preceding block's value by construction of the truncation.
pub fn haar_synthesis(t_len: usize, c0: f64, detail: &[Vec<f64>]) -> Vec<f64> {
    let n = t_len.next_power_of_two().max(1);
    let mut base = vec![c0; n];
    for (level, coeffs) in detail.iter().enumerate() {
        let blocks = 1usize << level;
        let block_len = n / blocks;
        if block_len < 2 {
            break;
        }
        let half = block_len / 2;
        for (k, c) in coeffs.iter().enumerate().take(blocks) {
            let start = k * block_len;
            for v in &mut base[start..start + half] {
                *v += c;
            }
            for v in &mut base[start + half..start + block_len] {
                *v -= c;
            }
        }
    }
    base.truncate(t_len);
    base
}

/// Sample a nonnegative capacity plan with mean level near `scale`.
/// `n_levels` dyadic detail levels, Gaussian coefficients with standard
/// deviation `coeff_sd` relative to the unit scaling coefficient.
pub fn sample_capacity_plan(
    seed: u64,
    t_len: usize,
    scale: f64,
    n_levels: usize,
    coeff_sd: f64,
) -> Result<CapacityPlan> {
    if t_len < 1 {
        return Err(Error::InvalidArgument("plan horizon must be >= 1".into()));
    }
    if scale < 0.0 || coeff_sd < 0.0 {
        return Err(Error::InvalidArgument("plan scale and coeff sd must be >= 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, coeff_sd.max(1e-300)).expect("valid normal");
    let detail: Vec<Vec<f64>> = (0..n_levels)
        .map(|level| {
            (0..(1usize << level))
                .map(|_| if coeff_sd > 0.0 { normal.sample(&mut rng) } else { 0.0 })
                .collect()
        })
        .collect();
    let mut values = haar_synthesis(t_len, 1.0, &detail);
    for v in &mut values {
        *v = (*v * scale).max(0.0);
    }
    Ok(CapacityPlan { values })
}

/// The tightness factor applied to the unconstrained-inbound scale when
/// sampling evaluation/training plans.
pub fn sample_tightness<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..=hi)
}
