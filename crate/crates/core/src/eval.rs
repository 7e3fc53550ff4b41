//! Strategy evaluation: P&L statistics, strategy tables, action slices,
//! uncertainty heatmaps and calibration bins.
//!
//! Variances use the `n - 1` divisor throughout. Rollouts fan out over
//! episodes; every reduction runs sequentially in episode order, so results
//! do not depend on the thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{epistemic_q_variance, Actor};
use crate::analytics::DAYS_PER_YEAR;
use crate::data::csv_err;
use crate::env::{rollout, CostModel, HedgePolicy, HedgeState, Rollout};
use crate::error::{HedgeError, Result};
use crate::market::HedgeEpisode;
use crate::nn::DenseNet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            lo: -10.0,
            hi: 2.0,
            bins: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Values outside the range are counted in the end bins.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], spec: &HistogramSpec) -> Self {
        let width = (spec.hi - spec.lo) / spec.bins as f64;
        let edges = (0..=spec.bins).map(|i| spec.lo + i as f64 * width).collect();
        let mut counts = vec![0; spec.bins];
        for &v in values {
            let k = ((v - spec.lo) / width).floor();
            let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(spec.bins - 1) };
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lo", "hi", "count"]).map_err(csv_err)?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| HedgeError::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlReport {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
    /// Values are divided by each episode's premium.
    pub normalized: bool,
    /// Mean premium of the evaluated episodes.
    pub mean_premium: f64,
    pub histogram: Histogram,
}

/// Mean and unbiased variance.
pub fn mean_variance(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(HedgeError::Argument(format!(
            "statistics need at least 2 samples, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

impl PnlReport {
    pub fn from_values(values: &[f64], normalized: bool, mean_premium: f64, spec: &HistogramSpec) -> Result<Self> {
        let (mean, variance) = mean_variance(values)?;
        Ok(PnlReport {
            n: values.len(),
            mean,
            variance,
            std: variance.sqrt(),
            normalized,
            mean_premium,
            histogram: Histogram::new(values, spec),
        })
    }
}

pub fn rollouts(policy: &dyn HedgePolicy, episodes: &[HedgeEpisode], cost: &CostModel) -> Result<Vec<Rollout>> {
    episodes.par_iter().map(|ep| rollout(ep, policy, cost)).collect()
}

fn mean_premium(episodes: &[HedgeEpisode]) -> f64 {
    episodes.iter().map(|e| e.premium).sum::<f64>() / episodes.len().max(1) as f64
}

/// Per-episode total P&L, optionally divided by the premium.
pub fn episode_pnls(policy: &dyn HedgePolicy, episodes: &[HedgeEpisode], cost: &CostModel, normalize: bool) -> Result<Vec<f64>> {
    let runs = rollouts(policy, episodes, cost)?;
    Ok(runs
        .iter()
        .zip(episodes)
        .map(|(r, ep)| if normalize { r.total_pnl / ep.premium } else { r.total_pnl })
        .collect())
}

/// Every step reward of every episode, in episode then step order.
pub fn step_rewards(policy: &dyn HedgePolicy, episodes: &[HedgeEpisode], cost: &CostModel, normalize: bool) -> Result<Vec<f64>> {
    let runs = rollouts(policy, episodes, cost)?;
    Ok(runs
        .iter()
        .zip(episodes)
        .flat_map(|(r, ep)| {
            let scale = if normalize { ep.premium } else { 1.0 };
            r.transitions.iter().map(move |t| t.reward / scale)
        })
        .collect())
}

/// Statistics of total P&L per episode.
pub fn evaluate_policy(
    policy: &dyn HedgePolicy,
    episodes: &[HedgeEpisode],
    cost: &CostModel,
    normalize: bool,
) -> Result<PnlReport> {
    let values = episode_pnls(policy, episodes, cost, normalize)?;
    PnlReport::from_values(&values, normalize, mean_premium(episodes), &HistogramSpec::default())
}

/// Statistics of single step rewards.
pub fn per_step_report(
    policy: &dyn HedgePolicy,
    episodes: &[HedgeEpisode],
    cost: &CostModel,
    normalize: bool,
) -> Result<PnlReport> {
    let values = step_rewards(policy, episodes, cost, normalize)?;
    PnlReport::from_values(&values, normalize, mean_premium(episodes), &HistogramSpec::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
    pub gain_vs_delta: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTable {
    pub rows: Vec<StrategyRow>,
}

impl StrategyTable {
    pub fn row(&self, name: &str) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["name", "mean", "variance", "gain_vs_delta", "n"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.mean.to_string(),
                r.variance.to_string(),
                r.gain_vs_delta.to_string(),
                r.n.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| HedgeError::Format(e.to_string()))
    }
}

/// Evaluate each named strategy on the same episodes. One strategy must be
/// called `delta`; gains are measured against its mean.
pub fn compare_strategies(
    strategies: &[(&str, &dyn HedgePolicy)],
    episodes: &[HedgeEpisode],
    cost: &CostModel,
    normalize: bool,
    per_step: bool,
) -> Result<StrategyTable> {
    if !strategies.iter().any(|(n, _)| *n == "delta") {
        return Err(HedgeError::Argument("strategy comparison needs a \"delta\" row".into()));
    }
    let mut rows = Vec::with_capacity(strategies.len());
    for (name, policy) in strategies {
        let values = if per_step {
            step_rewards(*policy, episodes, cost, normalize)?
        } else {
            episode_pnls(*policy, episodes, cost, normalize)?
        };
        let (mean, variance) = mean_variance(&values)?;
        rows.push(StrategyRow {
            name: name.to_string(),
            mean,
            variance,
            std: variance.sqrt(),
            gain_vs_delta: 0.0,
            n: values.len(),
        });
    }
    let delta_mean = rows.iter().find(|r| r.name == "delta").expect("checked").mean;
    for r in &mut rows {
        r.gain_vs_delta = r.mean - delta_mean;
    }
    Ok(StrategyTable { rows })
}

/// Target position against moneyness for several held positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSlice {
    pub tau: f64,
    pub moneyness: Vec<f64>,
    pub positions: Vec<f64>,
    /// `curves[k][i]`: action at `moneyness[i]` when holding `positions[k]`.
    pub curves: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
}

pub fn action_pattern_slice(
    policy: &dyn HedgePolicy,
    moneyness: &[f64],
    tau: f64,
    positions: &[f64],
    vol: f64,
) -> Result<ActionSlice> {
    let states: Vec<HedgeState> = moneyness
        .iter()
        .map(|&m| HedgeState::simulated(tau, m, 0.0, vol))
        .collect::<Result<_>>()?;
    let curves = positions
        .iter()
        .map(|&p| states.iter().map(|s| policy.position(&s.with_position(p))).collect())
        .collect();
    Ok(ActionSlice {
        tau,
        moneyness: moneyness.to_vec(),
        positions: positions.to_vec(),
        curves,
        delta: states.iter().map(HedgeState::bs_delta).collect(),
    })
}

/// Values over a (tau, moneyness) grid; `None` marks an empty cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub moneyness: Vec<f64>,
    pub tau_days: Vec<f64>,
    /// `values[j][i]` for `tau_days[j]`, `moneyness[i]`.
    pub values: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl HeatmapGrid {
    fn empty(moneyness: &[f64], tau_days: &[f64]) -> Self {
        HeatmapGrid {
            moneyness: moneyness.to_vec(),
            tau_days: tau_days.to_vec(),
            values: vec![vec![None; moneyness.len()]; tau_days.len()],
            counts: vec![vec![0; moneyness.len()]; tau_days.len()],
        }
    }

    /// Mean of the present cells selected by `pick(moneyness, tau_days)`.
    pub fn mean_where(&self, pick: impl Fn(f64, f64) -> bool) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (j, &tau) in self.tau_days.iter().enumerate() {
            for (i, &m) in self.moneyness.iter().enumerate() {
                if let (true, Some(v)) = (pick(m, tau), self.values[j][i]) {
                    sum += v;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Long format `moneyness,tau_days,value,count`; missing values are empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["moneyness", "tau_days", "value", "count"]).map_err(csv_err)?;
        for (j, tau) in self.tau_days.iter().enumerate() {
            for (i, m) in self.moneyness.iter().enumerate() {
                w.write_record([
                    m.to_string(),
                    tau.to_string(),
                    self.values[j][i].map(|v| v.to_string()).unwrap_or_default(),
                    self.counts[j][i].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| HedgeError::Format(e.to_string()))
    }
}

/// `n` points from `lo` to `hi` in steps of `step` (inclusive, rounded to
/// avoid drift).
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| ((lo + i as f64 * step) * 1e10).round() / 1e10).collect()
}

fn check_grids(moneyness: &[f64], tau_days: &[f64]) -> Result<()> {
    if moneyness.is_empty() || tau_days.is_empty() {
        return Err(HedgeError::Argument("heatmap grids must be nonempty".into()));
    }
    Ok(())
}

/// Mean `sigma^2` of the variance head over grid states held at the
/// Black-Scholes delta.
pub fn uncertainty_heatmap(actor: &Actor, moneyness: &[f64], tau_days: &[f64], vol: f64) -> Result<HeatmapGrid> {
    check_grids(moneyness, tau_days)?;
    let mut g = HeatmapGrid::empty(moneyness, tau_days);
    for (j, &days) in tau_days.iter().enumerate() {
        for (i, &m) in moneyness.iter().enumerate() {
            let s = HedgeState::simulated(days / DAYS_PER_YEAR, m, 0.0, vol)?;
            let s = s.with_position(s.bs_delta());
            g.values[j][i] = Some(actor.sigma2(&s));
            g.counts[j][i] = 1;
        }
    }
    Ok(g)
}

/// MC-dropout variance of `Q(s, pi(s))` over grid states held at delta.
pub fn epistemic_heatmap(
    actor: &Actor,
    critic: &DenseNet,
    moneyness: &[f64],
    tau_days: &[f64],
    vol: f64,
    passes: usize,
    seed_value: u64,
) -> Result<HeatmapGrid> {
    check_grids(moneyness, tau_days)?;
    let mut g = HeatmapGrid::empty(moneyness, tau_days);
    for (j, &days) in tau_days.iter().enumerate() {
        for (i, &m) in moneyness.iter().enumerate() {
            let s = HedgeState::simulated(days / DAYS_PER_YEAR, m, 0.0, vol)?;
            let s = s.with_position(s.bs_delta());
            let cell = crate::seed::derive(seed_value, crate::seed::purpose::MC_DROPOUT, (j * moneyness.len() + i) as u64);
            g.values[j][i] = Some(epistemic_q_variance(critic, &s, actor.position(&s), passes, cell)?);
            g.counts[j][i] = 1;
        }
    }
    Ok(g)
}

fn nearest(grid: &[f64], x: f64) -> Option<usize> {
    let step = if grid.len() > 1 { grid[1] - grid[0] } else { f64::INFINITY };
    let k = grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(k, _)| k)?;
    ((grid[k] - x).abs() <= 0.5 * step.abs() + 1e-12).then_some(k)
}

/// Empirical variance of step rewards bucketed by the nearest
/// (moneyness, days to expiry) grid point at the start of the step. Cells
/// with fewer than two rewards are missing.
pub fn realized_variance_heatmap(
    episodes: &[HedgeEpisode],
    policy: &dyn HedgePolicy,
    cost: &CostModel,
    moneyness: &[f64],
    tau_days: &[f64],
    normalize: bool,
) -> Result<HeatmapGrid> {
    check_grids(moneyness, tau_days)?;
    let runs = rollouts(policy, episodes, cost)?;
    let mut cells: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); moneyness.len()]; tau_days.len()];
    for (run, ep) in runs.iter().zip(episodes) {
        let scale = if normalize { ep.premium } else { 1.0 };
        for t in &run.transitions {
            let days = t.state.tau * DAYS_PER_YEAR;
            if let (Some(i), Some(j)) = (nearest(moneyness, t.state.moneyness), nearest(tau_days, days)) {
                cells[j][i].push(t.reward / scale);
            }
        }
    }
    let mut g = HeatmapGrid::empty(moneyness, tau_days);
    for (j, row) in cells.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            g.counts[j][i] = v.len();
            g.values[j][i] = mean_variance(v).ok().map(|(_, var)| var);
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub mean_sigma2: f64,
    /// Unbiased variance of the rewards in the bin; `None` below 2 samples.
    pub realized_var: Option<f64>,
    /// All predictions in the bin are equal to those of a neighbour.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    /// Spearman correlation between bin mean `sigma^2` and realized
    /// variance; `None` when either side has no spread.
    pub spearman: Option<f64>,
}

impl CalibrationReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin", "lo", "hi", "n", "mean_sigma2", "realized_var"]).map_err(csv_err)?;
        for (k, b) in self.bins.iter().enumerate() {
            w.write_record([
                k.to_string(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.n.to_string(),
                b.mean_sigma2.to_string(),
                b.realized_var.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| HedgeError::Format(e.to_string()))
    }
}

/// Split `(sigma^2, reward)` samples into `k` equal-count bins ordered by
/// `sigma^2` and compare predicted and realized variance per bin.
pub fn calibration_bins(samples: &[(f64, f64)], k: usize) -> Result<CalibrationReport> {
    if k < 2 {
        return Err(HedgeError::Argument("calibration needs at least 2 bins".into()));
    }
    if samples.len() < k {
        return Err(HedgeError::Argument(format!(
            "{} samples cannot fill {k} bins",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = sorted.len();
    let mut bins = Vec::with_capacity(k);
    for b in 0..k {
        let chunk = &sorted[b * n / k..(b + 1) * n / k];
        let rewards: Vec<f64> = chunk.iter().map(|s| s.1).collect();
        bins.push(CalibrationBin {
            lo: chunk[0].0,
            hi: chunk[chunk.len() - 1].0,
            n: chunk.len(),
            mean_sigma2: chunk.iter().map(|s| s.0).sum::<f64>() / chunk.len() as f64,
            realized_var: mean_variance(&rewards).ok().map(|(_, v)| v),
            degenerate: false,
        });
    }
    for b in 0..k {
        let same_prev = b > 0 && bins[b - 1].hi == bins[b].lo && bins[b].lo == bins[b].hi;
        let same_next = b + 1 < k && bins[b + 1].lo == bins[b].hi && bins[b].lo == bins[b].hi;
        bins[b].degenerate = same_prev || same_next;
    }
    let spearman = if bins.iter().any(|b| b.degenerate || b.realized_var.is_none()) {
        None
    } else {
        let x: Vec<f64> = bins.iter().map(|b| b.mean_sigma2).collect();
        let y: Vec<f64> = bins.iter().map(|b| b.realized_var.unwrap()).collect();
        spearman(&x, &y)
    };
    Ok(CalibrationReport { bins, spearman })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` if either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// `(sigma^2(s_t), R_t)` pairs from running `policy` on the episodes.
pub fn calibration_samples(
    actor: &Actor,
    policy: &dyn HedgePolicy,
    episodes: &[HedgeEpisode],
    cost: &CostModel,
    normalize: bool,
) -> Result<Vec<(f64, f64)>> {
    let runs = rollouts(policy, episodes, cost)?;
    Ok(runs
        .iter()
        .zip(episodes)
        .flat_map(|(r, ep)| {
            let scale = if normalize { ep.premium } else { 1.0 };
            r.transitions.iter().map(move |t| (actor.sigma2(&t.state), t.reward / scale))
        })
        .collect())
}

/// Per-step trajectory rows `episode_id,step,stock,option,position,reward,cum_pnl`.
pub fn write_trajectories<W: Write>(
    policy: &dyn HedgePolicy,
    episodes: &[HedgeEpisode],
    cost: &CostModel,
    writer: W,
) -> Result<()> {
    let runs = rollouts(policy, episodes, cost)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["episode_id", "step", "stock", "option", "position", "reward", "cum_pnl"])
        .map_err(csv_err)?;
    for (id, (run, ep)) in runs.iter().zip(episodes).enumerate() {
        let mut cum = 0.0;
        for (t, tr) in run.transitions.iter().enumerate() {
            cum += tr.reward;
            w.write_record([
                id.to_string(),
                t.to_string(),
                ep.stock(t).to_string(),
                ep.option(t).to_string(),
                tr.action.to_string(),
                tr.reward.to_string(),
                cum.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| HedgeError::Format(e.to_string()))
}
