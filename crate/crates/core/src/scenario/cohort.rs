//! Uniform without-replacement cohort sampling with recorded inclusion
//! probabilities, for scaling interface queries to large target populations.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cohort {
    /// Indices into the population's member list, sorted ascending.
    pub members: Vec<usize>,
    /// Inclusion probability p_i = n / N, identical for uniform sampling.
    pub inclusion_prob: f64,
    pub population_size: usize,
}

pub fn sample_cohort(population_size: usize, n: usize, seed: u64) -> Result<Cohort> {
    if n > population_size {
        return Err(Error::InvalidArgument(format!(
            "cohort size {n} exceeds population {population_size}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut idx: Vec<usize> = (0..population_size).collect();
    idx.shuffle(&mut rng);
    let mut members: Vec<usize> = idx.into_iter().take(n).collect();
    members.sort_unstable();
    Ok(Cohort {
        members,
        inclusion_prob: n as f64 / population_size.max(1) as f64,
        population_size,
    })
}
