//! Everything exogenous to training: synthetic product catalogs, Haar-wavelet
//! capacity plans, alpha-shifted populations, cohort samples, and
//! constraint-space cost trajectories. All generators are pure given
//! (seed, config).

pub mod catalog;
pub mod cohort;
pub mod costgen;
pub mod shift;
pub mod wavelet;

pub use catalog::{
    gen_catalog, holiday_distance, Catalog, CatalogConfig, CatalogEntry, ATTRIBUTE_NAMES,
};
pub use cohort::{sample_cohort, Cohort};
// costgen exports land once the nn + control modules exist.
pub use shift::{
    quantile_buckets, sample_population, shift_weights, PopMember, PopulationSpec,
    ShiftAttribute, ShiftSpec,
};
pub use wavelet::{haar_synthesis, sample_capacity_plan, sample_tightness, CapacityPlan};

use crate::sim::{AgentInput, RolloutCfg, RolloutRecord};

/// Materialize simulator inputs for a sampled population.
pub fn population_agents<'c>(
    catalog: &'c Catalog,
    population: &PopulationSpec,
) -> Vec<AgentInput<'c>> {
    population
        .members
        .iter()
        .map(|m| AgentInput {
            id: m.catalog_idx,
            exo: &catalog.paths[m.catalog_idx],
            policy: catalog.entries[m.catalog_idx].policy(catalog.config.demand_window),
        })
        .collect()
}

/// Unconstrained rollout of a population: the lambda = 0 baseline used for
/// plan scaling and near-limit masks.
pub fn unconstrained_rollout(
    catalog: &Catalog,
    population: &PopulationSpec,
    cfg: &RolloutCfg,
) -> crate::Result<RolloutRecord> {
    let agents = population_agents(catalog, population);
    crate::sim::rollout(&agents, &vec![0.0; cfg.weeks], cfg)
}
