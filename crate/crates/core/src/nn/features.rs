//! Feature assembly for the coordination interfaces. Historical features
//! span [t-H, t) (episode-relative, zero-padded on the left with a validity
//! flag); future known features span [t, t+L); the demand-scale quantities
//! d^i and D(S_t) come from the replayable exogenous demand history.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::params::{FeatureStats, AGENT_CHANNELS, FUTURE_CHANNELS, GLOBAL_CHANNELS};
use crate::scenario::{holiday_distance, Catalog, PopulationSpec};
use crate::sim::{demand_forecast, RolloutRecord};

pub const STD_FLOOR: f64 = 1e-6;

fn z(x: f64, mean: f64, std: f64) -> f64 {
    (x - mean) / std.max(STD_FLOOR)
}

/// Mean exogenous demand of one agent over the H weeks before `abs_week`.
pub fn demand_scale_at(catalog: &Catalog, catalog_idx: usize, abs_week: usize, h: usize) -> f64 {
    let exo = &catalog.paths[catalog_idx];
    let lo = abs_week.saturating_sub(h);
    if lo == abs_week {
        return 0.0;
    }
    exo.demand[lo..abs_week].iter().sum::<f64>() / (abs_week - lo) as f64
}

/// Per-episode feature pack: per-agent and aggregate history series laid out
/// over episode positions 0..=W (position 0 is the all-zero pre-episode pad,
/// position tau+1 holds week tau), so the encoder output at position t is
/// exactly the embedding for a query at decision week t.
#[derive(Debug, Clone)]
pub struct EpisodeFeatures {
    /// Standardized per-agent history series, each (AGENT_CHANNELS, W+1).
    pub agent_series: Vec<Tensor>,
    /// Standardized aggregate history series, (GLOBAL_CHANNELS, W+1).
    pub global_series: Tensor,
    /// d^i per [week][agent]: exogenous windowed-mean demand at each week.
    pub agent_d: Vec<Vec<f64>>,
    /// D(S_t) per week (floored away from zero).
    pub d_scale: Vec<f64>,
    /// Raw (unstandardized) future features per week, each (3, L).
    pub future_raw: Vec<Tensor>,
    pub weeks: usize,
}

/// Assemble episode features from a finished rollout.
pub fn build_episode_features(
    catalog: &Catalog,
    population: &PopulationSpec,
    record: &RolloutRecord,
    stats: &FeatureStats,
    horizon: usize,
    history_len: usize,
) -> Result<EpisodeFeatures> {
    let n = population.len();
    if record.n_agents() != n {
        return Err(Error::ShapeMismatch {
            op: "build_episode_features",
            detail: format!("record has {} agents, population {}", record.n_agents(), n),
        });
    }
    let w = record.weeks();
    let cols = w + 1;
    let start = record.start_week;

    let mut agent_series = Vec::with_capacity(n);
    let mut global_raw = vec![0.0; GLOBAL_CHANNELS * cols];
    for (i, m) in population.members.iter().enumerate() {
        let exo = &catalog.paths[m.catalog_idx];
        let mut s = vec![0.0; AGENT_CHANNELS * cols];
        for tau in 0..w {
            let c = tau + 1;
            let row = [
                record.orders[i][tau],
                record.inventory[i][tau],
                record.demand[i][tau],
                record.inbound[i][tau],
                exo.price[start + tau],
                exo.cost[start + tau],
            ];
            for (ch, v) in row.iter().enumerate() {
                s[ch * cols + c] = z(*v, stats.agent_mean[ch], stats.agent_std[ch]);
            }
            s[6 * cols + c] = 1.0; // validity
            global_raw[c] += record.orders[i][tau];
            global_raw[cols + c] += record.inventory[i][tau];
            global_raw[2 * cols + c] += record.demand[i][tau];
            global_raw[3 * cols + c] += record.inbound[i][tau];
        }
        agent_series.push(Tensor::new(vec![AGENT_CHANNELS, cols], s)?);
    }
    let mut global_series = vec![0.0; GLOBAL_CHANNELS * cols];
    for tau in 0..w {
        let c = tau + 1;
        for ch in 0..4 {
            global_series[ch * cols + c] =
                z(global_raw[ch * cols + c], stats.global_mean[ch], stats.global_std[ch]);
        }
        global_series[4 * cols + c] = 1.0;
    }

    // exogenous demand scales and future features per query week
    let mut agent_d = Vec::with_capacity(w);
    let mut d_scale = Vec::with_capacity(w);
    let mut future_raw = Vec::with_capacity(w);
    for t in 0..w {
        let abs = start + t;
        let ds: Vec<f64> = population
            .members
            .iter()
            .map(|m| demand_scale_at(catalog, m.catalog_idx, abs, history_len))
            .collect();
        let total: f64 = ds.iter().sum::<f64>().max(1e-9);
        // current inventory entering week t and flat trailing-mean forecasts
        let forecasts: Vec<f64> = population
            .members
            .iter()
            .map(|m| {
                let exo = &catalog.paths[m.catalog_idx];
                demand_forecast(exo, abs, catalog.config.demand_window)
            })
            .collect();
        let inventory_now: f64 = (0..n)
            .map(|i| {
                if t == 0 {
                    let m = &population.members[i];
                    let e = &catalog.entries[m.catalog_idx];
                    e.coverage_weeks
                        * demand_forecast(&catalog.paths[m.catalog_idx], start, catalog.config.demand_window)
                } else {
                    record.inventory[i][t - 1]
                }
            })
            .sum();
        let agg_forecast: f64 = forecasts.iter().sum();
        let mut fut = vec![0.0; FUTURE_CHANNELS * horizon];
        for l in 0..horizon {
            fut[l] = agg_forecast;
            fut[horizon + l] = inventory_now - (l as f64 + 1.0) * agg_forecast;
            fut[2 * horizon + l] = holiday_distance(abs + l);
        }
        agent_d.push(ds);
        d_scale.push(total);
        future_raw.push(Tensor::new(vec![FUTURE_CHANNELS, horizon], fut)?);
    }

    Ok(EpisodeFeatures {
        agent_series,
        global_series: Tensor::new(vec![GLOBAL_CHANNELS, cols], global_series)?,
        agent_d,
        d_scale,
        future_raw,
        weeks: w,
    })
}

/// Standardize a raw future block for one query, applying the scale-free
/// ratio on population-scale channels when requested.
pub fn standardize_future(
    raw: &Tensor,
    stats: &FeatureStats,
    scale_free: bool,
    d_scale: f64,
) -> Tensor {
    let horizon = raw.shape[1];
    let mut out = raw.data.clone();
    let ratio = if scale_free { stats.d_ref / d_scale.max(1e-9) } else { 1.0 };
    for ch in 0..FUTURE_CHANNELS {
        // holiday distance is population-independent; no rescaling
        let r = if ch == 2 { 1.0 } else { ratio };
        for l in 0..horizon {
            let v = raw.data[ch * horizon + l] * r;
            out[ch * horizon + l] = z(v, stats.future_mean[ch], stats.future_std[ch]);
        }
    }
    Tensor { shape: raw.shape.clone(), data: out }
}

/// Standardize the signal window (lambda for primal, G for dual).
pub fn standardize_signal(
    signal: &[f64],
    stats: &FeatureStats,
    scale_free_plan: bool,
    d_scale: f64,
) -> Tensor {
    let ratio = if scale_free_plan { stats.d_ref / d_scale.max(1e-9) } else { 1.0 };
    Tensor::vector(
        signal.iter().map(|s| z(s * ratio, stats.signal_mean, stats.signal_std)).collect(),
    )
}

/// One query-time view: the H-week windows ending just before week t.
/// Mostly a testing and single-shot convenience; batched paths slice the
/// episode series directly.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    /// Per-agent (AGENT_CHANNELS, H) windows.
    pub agent_windows: Vec<Tensor>,
    /// (GLOBAL_CHANNELS, H) aggregate window.
    pub global_window: Tensor,
    /// Raw future block (3, L).
    pub future_raw: Tensor,
    pub d_scale: f64,
    pub agent_d: Vec<f64>,
}

/// Extract the windowed view for a query at decision week `t`.
pub fn build_features(ep: &EpisodeFeatures, t: usize, history_len: usize) -> Result<FeatureBundle> {
    if t >= ep.weeks {
        return Err(Error::InvalidArgument(format!(
            "query week {t} beyond episode of {} weeks",
            ep.weeks
        )));
    }
    let window = |series: &Tensor| -> Tensor {
        let ch = series.shape[0];
        let cols = series.shape[1];
        let mut out = vec![0.0; ch * history_len];
        // positions t-H+1 ..= t of the padded series (episode weeks t-H..t-1)
        for k in 0..history_len {
            let pos = (t + 1).checked_sub(history_len - k);
            if let Some(p) = pos {
                if p < cols {
                    for c in 0..ch {
                        out[c * history_len + k] = series.data[c * cols + p];
                    }
                }
            }
        }
        Tensor { shape: vec![ch, history_len], data: out }
    };
    Ok(FeatureBundle {
        agent_windows: ep.agent_series.iter().map(&window).collect(),
        global_window: window(&ep.global_series),
        future_raw: ep.future_raw[t].clone(),
        d_scale: ep.d_scale[t],
        agent_d: ep.agent_d[t].clone(),
    })
}

/// Estimate per-feature standardization statistics from training rollouts.
pub fn estimate_stats(
    catalog: &Catalog,
    samples: &[(&PopulationSpec, &RolloutRecord)],
    horizon: usize,
    history_len: usize,
    head_is_dual: bool,
) -> Result<FeatureStats> {
    if samples.is_empty() {
        return Err(Error::Empty("estimate_stats needs at least one rollout".into()));
    }
    let mut acc = StatsAcc::default();
    for (pop, rec) in samples {
        let identity = FeatureStats::identity();
        let ep = build_episode_features(catalog, pop, rec, &identity, horizon, history_len)?;
        let cols = rec.weeks() + 1;
        for s in &ep.agent_series {
            for ch in 0..6 {
                for c in 1..cols {
                    acc.agent[ch].push(s.data[ch * cols + c]);
                }
            }
        }
        for ch in 0..4 {
            for c in 1..cols {
                acc.global[ch].push(ep.global_series.data[ch * cols + c]);
            }
        }
        for t in 0..rec.weeks() {
            let d = ep.d_scale[t];
            acc.dscale.push(d);
            for ch in 0..FUTURE_CHANNELS {
                for l in 0..horizon {
                    acc.future[ch].push(ep.future_raw[t].data[ch * horizon + l]);
                }
            }
            acc.signal.push(rec.lambda[t]);
            if head_is_dual {
                if let Some(p) = &rec.plan {
                    acc.signal.push(p[t]);
                }
            }
            acc.out.push(rec.inbound_total[t]);
        }
    }
    let d_ref = mean(&acc.dscale).max(1e-9);
    // scale-free variants see future/signal channels divided by D(S)/d_ref;
    // with D(S) near d_ref on the training set the raw moments are close
    // enough for standardization purposes, so one set of stats serves both.
    let (agent_mean, agent_std) = moments_vec(&acc.agent);
    let (global_mean, global_std) = moments_vec(&acc.global);
    let (future_mean, future_std) = moments_vec(&acc.future);
    let (sm, ss) = moments(&acc.signal);
    let (om, os) = moments(&acc.out);
    Ok(FeatureStats {
        agent_mean,
        agent_std,
        global_mean,
        global_std,
        future_mean,
        future_std,
        signal_mean: sm,
        signal_std: ss,
        d_ref,
        out_mean: om,
        out_std: os,
    })
}

#[derive(Default)]
struct StatsAcc {
    agent: [Vec<f64>; 6],
    global: [Vec<f64>; 4],
    future: [Vec<f64>; 3],
    signal: Vec<f64>,
    dscale: Vec<f64>,
    out: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let v = if xs.is_empty() {
        1.0
    } else {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
    };
    (m, v.sqrt().max(STD_FLOOR))
}

fn moments_vec<const N: usize>(xs: &[Vec<f64>; N]) -> (Vec<f64>, Vec<f64>) {
    let mut means = Vec::with_capacity(N);
    let mut stds = Vec::with_capacity(N);
    for v in xs {
        let (m, s) = moments(v);
        means.push(m);
        stds.push(s);
    }
    (means, stds)
}

/// Horvitz-Thompson estimate of a population demand total from a cohort:
/// sum of d^i / p_i over cohort members. Rejects nonpositive probabilities.
pub fn ht_scale(cohort_d: &[f64], inclusion_probs: &[f64]) -> Result<f64> {
    if cohort_d.len() != inclusion_probs.len() {
        return Err(Error::ShapeMismatch {
            op: "ht_scale",
            detail: format!("{} values vs {} probabilities", cohort_d.len(), inclusion_probs.len()),
        });
    }
    let mut total = 0.0;
    for (d, p) in cohort_d.iter().zip(inclusion_probs) {
        if *p <= 0.0 {
            return Err(Error::InvalidArgument(format!("inclusion probability {p} <= 0")));
        }
        total += d / p;
    }
    Ok(total)
}

/// Serializable summary of where a dataset's statistics came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsProvenance {
    pub n_rollouts: usize,
    pub n_weeks: usize,
}
