//! Synthetic product catalogs: right-skewed demand scales, positively skewed
//! margins negatively correlated with demand, seasonal Poisson weekly demand,
//! and per-agent lead times. Replaces retailer data; everything is
//! deterministic per seed.

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed_indexed, rng_from_seed};
use crate::sim::{ExogenousPath, PolicyParams};

pub const ATTRIBUTE_NAMES: [&str; 5] = ["margin", "demand", "coverage", "volume", "lead_time"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogConfig {
    /// Weeks of exogenous history generated per product.
    pub weeks: usize,
    /// Median of the log-normal weekly demand scale.
    pub demand_median: f64,
    /// Sigma of the log-normal demand scale (right-skew knob).
    pub demand_sigma: f64,
    pub margin_median: f64,
    pub margin_sigma: f64,
    /// Regression of log margin on standardized log demand; negative makes
    /// high-demand products low-margin, which ties the response mixture to
    /// the demand composition.
    pub margin_demand_slope: f64,
    pub cost_median: f64,
    pub cost_sigma: f64,
    /// Seasonal amplitude on the demand rate.
    pub season_amp: f64,
    pub season_period: f64,
    /// Lead times are integers in [1, v_max].
    pub v_max: u32,
    pub coverage_min: f64,
    pub coverage_max: f64,
    /// Shared policy gate slope kappa.
    pub gate_slope: f64,
    pub demand_window: usize,
    /// Demand variance as a multiple of Poisson (1.0 = Poisson; larger uses
    /// a gamma-Poisson mixture with matching mean).
    pub demand_variance_ratio: f64,
    /// Per-agent multiplicative jitter on the gate slope (surrogate envs).
    pub gate_slope_jitter: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            weeks: 320,
            demand_median: 5.0,
            demand_sigma: 1.2,
            margin_median: 2.0,
            margin_sigma: 0.6,
            margin_demand_slope: -0.35,
            cost_median: 2.0,
            cost_sigma: 0.5,
            season_amp: 0.25,
            season_period: 52.0,
            v_max: 4,
            coverage_min: 2.0,
            coverage_max: 4.0,
            gate_slope: 1.5,
            demand_window: 8,
            demand_variance_ratio: 1.0,
            gate_slope_jitter: 0.0,
        }
    }
}

impl CatalogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weeks < 2 {
            return Err(Error::Config("catalog weeks must be >= 2".into()));
        }
        if self.demand_median <= 0.0 || self.demand_sigma < 0.0 {
            return Err(Error::Config("demand scale parameters out of range".into()));
        }
        if self.margin_median <= 0.0 || self.cost_median <= 0.0 {
            return Err(Error::Config("price parameters must be positive".into()));
        }
        if self.v_max < 1 {
            return Err(Error::Config("v_max must be >= 1".into()));
        }
        if self.coverage_min <= 0.0 || self.coverage_max < self.coverage_min {
            return Err(Error::Config("coverage range invalid".into()));
        }
        if self.demand_variance_ratio < 1.0 {
            return Err(Error::Config("demand variance ratio must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: usize,
    /// Mean weekly demand scale d^i.
    pub demand_scale: f64,
    /// Mean unit margin p - c.
    pub margin: f64,
    pub lead_time_mean: f64,
    pub coverage_weeks: f64,
    /// Physical volume; response-irrelevant by construction, kept as a null
    /// attribute for the responsiveness regressions.
    pub volume: f64,
    pub gate_slope: f64,
}

impl CatalogEntry {
    /// Attribute vector in `ATTRIBUTE_NAMES` order.
    pub fn attributes(&self) -> [f64; 5] {
        [self.margin, self.demand_scale, self.coverage_weeks, self.volume, self.lead_time_mean]
    }

    pub fn policy(&self, demand_window: usize) -> PolicyParams {
        PolicyParams {
            coverage_weeks: self.coverage_weeks,
            gate_slope: self.gate_slope,
            demand_window,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    pub entries: Vec<CatalogEntry>,
    pub paths: Vec<ExogenousPath>,
    pub config: CatalogConfig,
    pub seed: u64,
}

impl Catalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn gen_catalog(n: usize, seed: u64, config: &CatalogConfig) -> Result<Catalog> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("catalog needs at least one entry".into()));
    }
    let ln = |m: f64, s: f64| LogNormal::new(m.ln(), s).expect("valid log-normal");
    let demand_dist = ln(config.demand_median, config.demand_sigma);
    let cost_dist = ln(config.cost_median, config.cost_sigma);

    let mut entries = Vec::with_capacity(n);
    let mut paths = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed_indexed(seed, "catalog-agent", i as u64));
        let demand_scale = demand_dist.sample(&mut rng);
        // log-margin regressed on standardized log demand, plus noise
        let zd = (demand_scale.ln() - config.demand_median.ln()) / config.demand_sigma.max(1e-9);
        let margin_mu = config.margin_median.ln() + config.margin_demand_slope * zd;
        let margin = LogNormal::new(margin_mu, config.margin_sigma)
            .expect("valid log-normal")
            .sample(&mut rng);
        let unit_cost = cost_dist.sample(&mut rng);
        let lead_base: u32 = rng.gen_range(1..=config.v_max);
        let coverage = rng.gen_range(config.coverage_min..=config.coverage_max);
        let volume = ln(1.0, 0.8).sample(&mut rng);
        let gate_slope = if config.gate_slope_jitter > 0.0 {
            config.gate_slope
                * (1.0 + rng.gen_range(-config.gate_slope_jitter..=config.gate_slope_jitter))
        } else {
            config.gate_slope
        };
        let phase: f64 = rng.gen_range(0.0..config.season_period);

        let mut demand = Vec::with_capacity(config.weeks);
        let mut price = Vec::with_capacity(config.weeks);
        let mut cost = Vec::with_capacity(config.weeks);
        let mut lead_time = Vec::with_capacity(config.weeks);
        for t in 0..config.weeks {
            let season = 1.0
                + config.season_amp
                    * (std::f64::consts::TAU * (t as f64 + phase) / config.season_period).sin();
            let rate = (demand_scale * season).max(1e-9);
            let d = if config.demand_variance_ratio > 1.0 {
                // gamma-Poisson mixture: mean `rate`, variance
                // ratio * Poisson variance
                let extra = config.demand_variance_ratio - 1.0;
                let shape = rate / extra;
                let mixed = Gamma::new(shape, extra).expect("valid gamma").sample(&mut rng);
                Poisson::new(mixed.max(1e-12)).expect("valid poisson").sample(&mut rng)
            } else {
                Poisson::new(rate).expect("valid poisson").sample(&mut rng)
            };
            demand.push(d);
            let c = unit_cost * (1.0 + 0.03 * (std::f64::consts::TAU * t as f64 / 26.0).sin());
            cost.push(c);
            price.push(c + margin * (1.0 + 0.05 * (std::f64::consts::TAU * t as f64 / 13.0).cos()));
            let jitter: i64 = rng.gen_range(-1..=1);
            let lt = (lead_base as i64 + jitter).clamp(1, config.v_max as i64) as u32;
            lead_time.push(lt);
        }
        let path = ExogenousPath { demand, price, cost, lead_time };
        path.validate(config.v_max)?;
        entries.push(CatalogEntry {
            id: i,
            demand_scale,
            margin,
            lead_time_mean: lead_base as f64,
            coverage_weeks: coverage,
            volume,
            gate_slope,
        });
        paths.push(path);
    }
    Ok(Catalog { entries, paths, config: config.clone(), seed })
}

/// Distance (in weeks) to the nearest public holiday, for the global future
/// feature. Holidays repeat yearly at fixed weeks of the 52-week cycle.
pub const HOLIDAY_WEEKS: [u32; 2] = [25, 51];

pub fn holiday_distance(abs_week: usize) -> f64 {
    let w = (abs_week % 52) as i64;
    HOLIDAY_WEEKS
        .iter()
        .map(|h| {
            let d = (w - *h as i64).abs();
            d.min(52 - d) as f64
        })
        .fold(f64::INFINITY, f64::min)
}
