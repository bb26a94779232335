//! Controlled population shifts: quantile-bucket the catalog along a
//! response-relevant attribute, tilt the bucket masses by
//! p_k(alpha) = u_k * xi_k^alpha / sum_l u_l * xi_l^alpha, and sample agents
//! bucket-first, uniformly within each bucket.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scenario::catalog::Catalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftAttribute {
    Demand,
    Margin,
}

impl ShiftAttribute {
    pub fn value(&self, catalog: &Catalog, idx: usize) -> f64 {
        match self {
            ShiftAttribute::Demand => catalog.entries[idx].demand_scale,
            ShiftAttribute::Margin => catalog.entries[idx].margin,
        }
    }
}

/// Assign each value to one of `k` quantile buckets (0 = lowest). Ties are
/// broken by original index, so assignment is deterministic.
pub fn quantile_buckets(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("bucket count must be >= 1".into()));
    }
    if values.is_empty() {
        return Err(Error::Empty("quantile_buckets over no values".into()));
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| values[*a].partial_cmp(&values[*b]).unwrap().then(a.cmp(b)));
    let mut assign = vec![0usize; n];
    for (rank, idx) in order.iter().enumerate() {
        assign[*idx] = (rank * k / n).min(k - 1);
    }
    Ok(assign)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub attribute: ShiftAttribute,
    pub k_buckets: usize,
    pub alpha: f64,
    /// Baseline bucket masses u_k (sum to 1).
    pub baseline_masses: Vec<f64>,
    /// Bucket means of the shift attribute (strictly positive).
    pub bucket_means: Vec<f64>,
    /// Catalog membership of each bucket.
    pub bucket_members: Vec<Vec<usize>>,
}

impl ShiftSpec {
    /// Build the decile (or K-quantile) structure over a catalog.
    pub fn from_catalog(
        catalog: &Catalog,
        attribute: ShiftAttribute,
        k: usize,
        alpha: f64,
    ) -> Result<Self> {
        let values: Vec<f64> =
            (0..catalog.len()).map(|i| attribute.value(catalog, i)).collect();
        let assign = quantile_buckets(&values, k)?;
        let mut members = vec![Vec::new(); k];
        for (i, b) in assign.iter().enumerate() {
            members[*b].push(i);
        }
        let n = catalog.len() as f64;
        let masses: Vec<f64> = members.iter().map(|m| m.len() as f64 / n).collect();
        let means: Vec<f64> = members
            .iter()
            .map(|m| {
                if m.is_empty() {
                    0.0
                } else {
                    m.iter().map(|i| values[*i]).sum::<f64>() / m.len() as f64
                }
            })
            .collect();
        let spec = ShiftSpec {
            attribute,
            k_buckets: k,
            alpha,
            baseline_masses: masses,
            bucket_means: means,
            bucket_members: members,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.baseline_masses.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("baseline masses sum to {s}")));
        }
        if self.bucket_means.iter().zip(&self.baseline_masses).any(|(m, u)| *m <= 0.0 && *u > 0.0)
        {
            return Err(Error::InvalidArgument(
                "nonpositive bucket mean with positive mass".into(),
            ));
        }
        Ok(())
    }
}

/// Tilted bucket masses p_k(alpha); alpha = 0 returns the baseline exactly.
pub fn shift_weights(spec: &ShiftSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.alpha == 0.0 {
        return Ok(spec.baseline_masses.clone());
    }
    let mut w: Vec<f64> = spec
        .baseline_masses
        .iter()
        .zip(&spec.bucket_means)
        .map(|(u, xi)| if *u > 0.0 { u * xi.powf(spec.alpha) } else { 0.0 })
        .collect();
    let z: f64 = w.iter().sum();
    if !z.is_finite() || z <= 0.0 {
        return Err(Error::NonFinite("shift weight normalizer".into()));
    }
    for x in &mut w {
        *x /= z;
    }
    Ok(w)
}

/// One sampled agent instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PopMember {
    pub catalog_idx: usize,
    pub bucket: usize,
    /// p_alpha(i) = p_{k(i)}(alpha) * r_{k(i)}(i), with uniform r.
    pub sampling_prob: f64,
}

/// A set of agent records sampled from the catalog.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub members: Vec<PopMember>,
    pub alpha: f64,
    pub attribute: ShiftAttribute,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Sum of catalog demand scales over the members.
    pub fn demand_scale_total(&self, catalog: &Catalog) -> f64 {
        self.members.iter().map(|m| catalog.entries[m.catalog_idx].demand_scale).sum()
    }
}

/// Draw `n` agents with bucket masses p_k(alpha) and uniform within-bucket
/// choice, with replacement.
pub fn sample_population(
    catalog: &Catalog,
    spec: &ShiftSpec,
    n: usize,
    seed: u64,
) -> Result<PopulationSpec> {
    let p = shift_weights(spec)?;
    for (k, pk) in p.iter().enumerate() {
        if *pk > 0.0 && spec.bucket_members[k].is_empty() {
            return Err(Error::InvalidArgument(format!(
                "bucket {k} has positive mass but no members"
            )));
        }
        if spec.bucket_members[k].iter().any(|i| *i >= catalog.len()) {
            return Err(Error::InvalidArgument(format!(
                "bucket {k} references agents outside the catalog"
            )));
        }
    }
    let mut cum = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for pk in &p {
        acc += pk;
        cum.push(acc);
    }
    let mut rng = rng_from_seed(seed);
    let mut members = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen_range(0.0..1.0);
        let bucket = cum.iter().position(|c| u < *c).unwrap_or(p.len() - 1);
        let within = &spec.bucket_members[bucket];
        let catalog_idx = within[rng.gen_range(0..within.len())];
        members.push(PopMember {
            catalog_idx,
            bucket,
            sampling_prob: p[bucket] / within.len() as f64,
        });
    }
    Ok(PopulationSpec { members, alpha: spec.alpha, attribute: spec.attribute, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::catalog::{gen_catalog, CatalogConfig};

    fn spec_from(u: Vec<f64>, xi: Vec<f64>, alpha: f64) -> ShiftSpec {
        let k = u.len();
        ShiftSpec {
            attribute: ShiftAttribute::Demand,
            k_buckets: k,
            alpha,
            baseline_masses: u,
            bucket_means: xi,
            bucket_members: vec![vec![0]; k],
        }
    }

    #[test]
    fn alpha_zero_recovers_baseline() {
        let spec = spec_from(vec![0.3, 0.5, 0.2], vec![1.0, 2.0, 5.0], 0.0);
        assert_eq!(shift_weights(&spec).unwrap(), vec![0.3, 0.5, 0.2]);
    }

    /// Hand evaluation: u=[.5,.5], xi=[1,4], alpha=1 -> [0.2, 0.8].
    #[test]
    fn hand_case_alpha_one() {
        let spec = spec_from(vec![0.5, 0.5], vec![1.0, 4.0], 1.0);
        let p = shift_weights(&spec).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-12 && (p[1] - 0.8).abs() < 1e-12, "{p:?}");
    }

    /// Hand evaluation: same spec with alpha=-1 flips to [0.8, 0.2].
    #[test]
    fn hand_case_alpha_minus_one() {
        let spec = spec_from(vec![0.5, 0.5], vec![1.0, 4.0], -1.0);
        let p = shift_weights(&spec).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn nonpositive_bucket_mean_rejected() {
        let spec = spec_from(vec![0.5, 0.5], vec![0.0, 4.0], 0.5);
        assert!(shift_weights(&spec).is_err());
    }

    #[test]
    fn weights_sum_to_one_and_stay_nonnegative() {
        let mut rng = crate::rng::rng_from_seed(3);
        use rand::Rng;
        for _ in 0..500 {
            let k = rng.gen_range(2..12);
            let mut u: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
            let z: f64 = u.iter().sum();
            u.iter_mut().for_each(|x| *x /= z);
            let xi: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..50.0)).collect();
            let alpha = rng.gen_range(-2.0..2.0);
            let p = shift_weights(&spec_from(u, xi, alpha)).unwrap();
            assert!(p.iter().all(|x| *x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// For ascending bucket means, increasing alpha weakly increases the top
    /// bucket's mass and weakly decreases the bottom bucket's.
    #[test]
    fn monotone_reweighting_in_alpha() {
        let mut rng = crate::rng::rng_from_seed(4);
        use rand::Rng;
        for _ in 0..200 {
            let k = rng.gen_range(2..8);
            let mut u: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let z: f64 = u.iter().sum();
            u.iter_mut().for_each(|x| *x /= z);
            let mut xi: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..20.0)).collect();
            xi.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xi.dedup_by(|a, b| {
                let close = (*a - *b).abs() < 1e-9;
                if close {
                    *b += 1e-6;
                }
                false
            });
            let a1 = rng.gen_range(-1.5..1.5);
            let a2 = a1 + rng.gen_range(0.0..1.0);
            let p1 = shift_weights(&spec_from(u.clone(), xi.clone(), a1)).unwrap();
            let p2 = shift_weights(&spec_from(u, xi, a2)).unwrap();
            assert!(p2[k - 1] >= p1[k - 1] - 1e-12);
            assert!(p2[0] <= p1[0] + 1e-12);
        }
    }

    #[test]
    fn quantile_deciles_balance() {
        let values: Vec<f64> = (0..100).map(|i| (i * 37 % 100) as f64).collect();
        let assign = quantile_buckets(&values, 10).unwrap();
        let mut counts = [0usize; 10];
        for b in &assign {
            counts[*b] += 1;
        }
        assert!(counts.iter().all(|c| *c == 10), "{counts:?}");
    }

    fn small_catalog(n: usize) -> Catalog {
        gen_catalog(n, 42, &CatalogConfig { weeks: 2, ..Default::default() }).unwrap()
    }

    /// Multinomial oracle: at alpha=0 and large n, realized bucket shares sit
    /// within 3 sigma of u_k.
    #[test]
    fn bucket_shares_match_multinomial_bounds() {
        let cat = small_catalog(400);
        let spec = ShiftSpec::from_catalog(&cat, ShiftAttribute::Demand, 10, 0.0).unwrap();
        let n = 40_000;
        let pop = sample_population(&cat, &spec, n, 9).unwrap();
        let mut counts = vec![0usize; 10];
        for m in &pop.members {
            counts[m.bucket] += 1;
        }
        for k in 0..10 {
            let u = spec.baseline_masses[k];
            let sd = (u * (1.0 - u) / n as f64).sqrt();
            let share = counts[k] as f64 / n as f64;
            assert!(
                (share - u).abs() <= 3.0 * sd,
                "bucket {k}: share {share} vs mass {u} (sd {sd})"
            );
        }
    }

    /// Positive alpha upweights high-demand deciles.
    #[test]
    fn positive_alpha_grows_top_decile() {
        let cat = small_catalog(400);
        let spec0 = ShiftSpec::from_catalog(&cat, ShiftAttribute::Demand, 10, 0.0).unwrap();
        let spec5 = ShiftSpec::from_catalog(&cat, ShiftAttribute::Demand, 10, 0.5).unwrap();
        let n = 20_000;
        let share_top = |spec: &ShiftSpec| {
            let pop = sample_population(&cat, spec, n, 11).unwrap();
            pop.members.iter().filter(|m| m.bucket == 9).count() as f64 / n as f64
        };
        assert!(share_top(&spec5) > share_top(&spec0));
    }

    #[test]
    fn empty_population_allowed() {
        let cat = small_catalog(50);
        let spec = ShiftSpec::from_catalog(&cat, ShiftAttribute::Demand, 10, 0.3).unwrap();
        let pop = sample_population(&cat, &spec, 0, 1).unwrap();
        assert!(pop.is_empty());
    }
}
