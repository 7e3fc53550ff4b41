//! Option-chain ingestion and feature construction.
//!
//! Input is a CSV with the header
//! `quote_date,expiry,strike,right,best_bid,best_ask,underlying_close`
//! (ISO dates, decimal prices). Rows that violate the row invariants are
//! returned as rejects with a reason; nothing is dropped silently.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::analytics::{bs_call_price, bs_delta, bs_greeks, implied_vol, OptionSpec, DAYS_PER_YEAR};
use crate::error::{HedgeError, Result};
use crate::market::{HedgeEpisode, PricePath};

pub const CHAIN_COLUMNS: [&str; 7] = [
    "quote_date",
    "expiry",
    "strike",
    "right",
    "best_bid",
    "best_ask",
    "underlying_close",
];

/// Trading days per year used to annualise historical volatility.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

pub const MONEYNESS_BAND: f64 = 0.20;
pub const MIN_INITIAL_DAYS: i64 = 15;
pub const MAX_INITIAL_DAYS: i64 = 40;
/// Closes needed on or before a row to compute both historical vols.
pub const MIN_HISTORY: usize = 31;

#[derive(Debug, Clone, PartialEq)]
pub struct OptionQuoteRow {
    pub quote_date: NaiveDate,
    pub expiry: NaiveDate,
    pub strike: f64,
    pub best_bid: f64,
    pub best_ask: f64,
    pub underlying_close: f64,
}

impl OptionQuoteRow {
    pub fn mid(&self) -> f64 {
        0.5 * (self.best_bid + self.best_ask)
    }

    pub fn days_to_expiry(&self) -> i64 {
        (self.expiry - self.quote_date).num_days()
    }

    pub fn moneyness(&self) -> f64 {
        self.underlying_close / self.strike
    }

    fn record(&self) -> [String; 7] {
        [
            self.quote_date.to_string(),
            self.expiry.to_string(),
            self.strike.to_string(),
            "call".to_string(),
            self.best_bid.to_string(),
            self.best_ask.to_string(),
            self.underlying_close.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub fields: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainLoad {
    pub rows: Vec<OptionQuoteRow>,
    pub rejects: Vec<RejectedRow>,
}

pub fn load_chain_csv(path: &Path) -> Result<ChainLoad> {
    let file = std::fs::File::open(path).map_err(|e| HedgeError::io(path, e))?;
    parse_chain(file)
}

pub fn parse_chain<R: Read>(reader: R) -> Result<ChainLoad> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers().map_err(|e| HedgeError::Format(e.to_string()))?.clone();
    let missing: Vec<String> = CHAIN_COLUMNS
        .iter()
        .filter(|c| !header.iter().any(|h| h == **c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(HedgeError::Schema(missing));
    }
    let idx: Vec<usize> = CHAIN_COLUMNS
        .iter()
        .map(|c| header.iter().position(|h| h == *c).unwrap())
        .collect();

    let mut out = ChainLoad::default();
    for record in csv.records() {
        let record = record.map_err(|e| HedgeError::Format(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let fields: Vec<String> = record.iter().map(str::to_string).collect();
        match parse_row(&record, &idx) {
            Ok(row) => out.rows.push(row),
            Err(reason) => out.rejects.push(RejectedRow { line, fields, reason }),
        }
    }
    Ok(out)
}

fn parse_row(record: &csv::StringRecord, idx: &[usize]) -> std::result::Result<OptionQuoteRow, String> {
    let field = |k: usize| record.get(idx[k]).ok_or_else(|| format!("missing field {}", CHAIN_COLUMNS[k]));
    let date = |k: usize| {
        let s = field(k)?;
        NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| format!("unparseable {} {s:?}", CHAIN_COLUMNS[k]))
    };
    let number = |k: usize| {
        let s = field(k)?;
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("unparseable {} {s:?}", CHAIN_COLUMNS[k])),
        }
    };
    let row = OptionQuoteRow {
        quote_date: date(0)?,
        expiry: date(1)?,
        strike: number(2)?,
        best_bid: number(4)?,
        best_ask: number(5)?,
        underlying_close: number(6)?,
    };
    let right = field(3)?;
    if !matches!(right.to_ascii_lowercase().as_str(), "c" | "call") {
        return Err(format!("unsupported right {right:?}"));
    }
    if row.strike <= 0.0 {
        return Err("non-positive strike".into());
    }
    if row.underlying_close <= 0.0 {
        return Err("non-positive underlying close".into());
    }
    if row.best_bid < 0.0 {
        return Err("negative bid".into());
    }
    if row.best_ask < row.best_bid {
        return Err("crossed quote".into());
    }
    if row.expiry < row.quote_date {
        return Err("expiry before quote date".into());
    }
    Ok(row)
}

pub fn write_chain_csv<W: Write>(rows: &[OptionQuoteRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CHAIN_COLUMNS).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.record()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HedgeError::Format(e.to_string()))
}

pub fn write_rejects_csv<W: Write>(rejects: &[RejectedRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    let mut header: Vec<&str> = CHAIN_COLUMNS.to_vec();
    header.push("reject_reason");
    w.write_record(&header).map_err(csv_err)?;
    for r in rejects {
        let mut fields = r.fields.clone();
        fields.resize(CHAIN_COLUMNS.len(), String::new());
        fields.push(r.reason.clone());
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HedgeError::Format(e.to_string()))
}

pub(crate) fn csv_err(e: csv::Error) -> HedgeError {
    HedgeError::Format(e.to_string())
}

/// Daily series of one contract.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainEpisode {
    pub strike: f64,
    pub expiry: NaiveDate,
    pub dates: Vec<NaiveDate>,
    pub mids: Vec<f64>,
    pub closes: Vec<f64>,
    pub days_to_expiry: Vec<i64>,
    /// Quotes as read, so the episode can be written back out.
    pub quotes: Vec<OptionQuoteRow>,
}

impl ChainEpisode {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// True when a trading day of `history` falls strictly between two
    /// consecutive observations.
    pub fn has_gap(&self, history: &UnderlierHistory) -> bool {
        self.dates.windows(2).any(|w| history.trading_days_between(w[0], w[1]) > 0)
    }

    fn from_rows(mut rows: Vec<OptionQuoteRow>) -> Self {
        rows.sort_by_key(|r| r.quote_date);
        rows.dedup_by_key(|r| r.quote_date);
        ChainEpisode {
            strike: rows[0].strike,
            expiry: rows[0].expiry,
            dates: rows.iter().map(|r| r.quote_date).collect(),
            mids: rows.iter().map(OptionQuoteRow::mid).collect(),
            closes: rows.iter().map(|r| r.underlying_close).collect(),
            days_to_expiry: rows.iter().map(OptionQuoteRow::days_to_expiry).collect(),
            quotes: rows,
        }
    }
}

/// Group rows by contract, drop observations more than 20% away from the
/// strike, and keep contracts whose first remaining observation has between
/// 15 and 40 days to expiry. Contracts come back ordered by (expiry, strike).
pub fn filter_universe(rows: &[OptionQuoteRow]) -> Vec<ChainEpisode> {
    let mut groups: BTreeMap<(NaiveDate, u64), Vec<OptionQuoteRow>> = BTreeMap::new();
    for row in rows {
        if (row.moneyness() - 1.0).abs() > MONEYNESS_BAND {
            continue;
        }
        groups
            .entry((row.expiry, ordered_bits(row.strike)))
            .or_default()
            .push(row.clone());
    }
    groups
        .into_values()
        .map(ChainEpisode::from_rows)
        .filter(|ep| (MIN_INITIAL_DAYS..=MAX_INITIAL_DAYS).contains(&ep.days_to_expiry[0]))
        .collect()
}

/// Sort key for positive floats.
fn ordered_bits(x: f64) -> u64 {
    x.to_bits()
}

/// Sample std of log returns over the last `window` returns, annualised
/// with 252 trading days.
pub fn historical_vol(closes: &[f64], window: usize) -> Result<f64> {
    if window < 2 || closes.len() < window + 1 {
        return Err(HedgeError::Argument(format!(
            "historical vol over {window} returns needs at least {} closes, got {}",
            window + 1,
            closes.len()
        )));
    }
    if closes.iter().any(|&c| !(c > 0.0)) {
        return Err(HedgeError::Domain("closes must be positive".into()));
    }
    let tail = &closes[closes.len() - window - 1..];
    let returns: Vec<f64> = tail.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((var * TRADING_DAYS_PER_YEAR).sqrt())
}

/// Underlier closes keyed by date, taken from every row of a chain file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnderlierHistory {
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
}

impl UnderlierHistory {
    /// First close seen for each date wins.
    pub fn from_rows(rows: &[OptionQuoteRow]) -> Self {
        let mut by_date = BTreeMap::new();
        for r in rows {
            by_date.entry(r.quote_date).or_insert(r.underlying_close);
        }
        UnderlierHistory {
            dates: by_date.keys().copied().collect(),
            closes: by_date.values().copied().collect(),
        }
    }

    /// Closes on or before `date`.
    pub fn closes_until(&self, date: NaiveDate) -> &[f64] {
        let end = self.dates.partition_point(|d| *d <= date);
        &self.closes[..end]
    }

    fn trading_days_between(&self, a: NaiveDate, b: NaiveDate) -> usize {
        let lo = self.dates.partition_point(|d| *d <= a);
        let hi = self.dates.partition_point(|d| *d < b);
        hi.saturating_sub(lo)
    }
}

/// Observable state of one contract on one day. Greeks are raw
/// Black-Scholes values for the contract's strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub tau: f64,
    pub moneyness: f64,
    pub sigma_impl: f64,
    pub vega: f64,
    pub theta: f64,
    pub gamma: f64,
    pub sigma_20: f64,
    pub sigma_30: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 8] = [
        "tau",
        "moneyness",
        "sigma_impl",
        "vega",
        "theta",
        "gamma",
        "sigma_20",
        "sigma_30",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.tau,
            self.moneyness,
            self.sigma_impl,
            self.vega,
            self.theta,
            self.gamma,
            self.sigma_20,
            self.sigma_30,
        ]
    }
}

/// Features of one row, or the reason they could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub date: NaiveDate,
    pub features: std::result::Result<FeatureVector, String>,
}

/// Features for every row of `episode`.
///
/// Implied volatility is solved from the mid. On the expiry date itself the
/// previous day's implied volatility is carried forward and the greeks are
/// zero. Rows whose solve fails, or that lack 31 closes of history, carry
/// the reason instead of features.
pub fn compute_features(episode: &ChainEpisode, history: &UnderlierHistory) -> Vec<FeatureRow> {
    let mut last_iv: Option<f64> = None;
    (0..episode.len())
        .map(|i| {
            let date = episode.dates[i];
            let features = row_features(episode, i, history, &mut last_iv);
            FeatureRow { date, features }
        })
        .collect()
}

fn row_features(
    episode: &ChainEpisode,
    i: usize,
    history: &UnderlierHistory,
    last_iv: &mut Option<f64>,
) -> std::result::Result<FeatureVector, String> {
    let closes = history.closes_until(episode.dates[i]);
    if closes.len() < MIN_HISTORY {
        return Err(format!("insufficient history ({} closes)", closes.len()));
    }
    let sigma_20 = historical_vol(closes, 20).map_err(|e| e.to_string())?;
    let sigma_30 = historical_vol(closes, 30).map_err(|e| e.to_string())?;
    let spot = episode.closes[i];
    let tau = episode.days_to_expiry[i] as f64 / DAYS_PER_YEAR;
    let moneyness = spot / episode.strike;
    if episode.days_to_expiry[i] == 0 {
        let sigma_impl = last_iv.ok_or("expiry row without a prior implied volatility")?;
        return Ok(FeatureVector {
            tau,
            moneyness,
            sigma_impl,
            vega: 0.0,
            theta: 0.0,
            gamma: 0.0,
            sigma_20,
            sigma_30,
        });
    }
    let spec = OptionSpec::call(episode.strike, tau).map_err(|e| e.to_string())?;
    let sigma_impl = implied_vol(episode.mids[i], spot, &spec).map_err(|e| e.to_string())?;
    let g = bs_greeks(spot, &spec, sigma_impl).map_err(|e| e.to_string())?;
    *last_iv = Some(sigma_impl);
    Ok(FeatureVector {
        tau,
        moneyness,
        sigma_impl,
        vega: g.vega,
        theta: g.theta,
        gamma: g.gamma,
        sigma_20,
        sigma_30,
    })
}

pub fn write_features_csv<W: Write>(
    contracts: &[(ChainEpisode, Vec<FeatureRow>)],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["expiry", "strike", "quote_date"];
    header.extend(FeatureVector::NAMES);
    header.push("flag");
    w.write_record(&header).map_err(csv_err)?;
    for (ep, rows) in contracts {
        for row in rows {
            let mut rec = vec![ep.expiry.to_string(), ep.strike.to_string(), row.date.to_string()];
            match &row.features {
                Ok(f) => {
                    rec.extend(f.values().iter().map(f64::to_string));
                    rec.push(String::new());
                }
                Err(reason) => {
                    rec.extend(std::iter::repeat_n(String::new(), 8));
                    rec.push(reason.clone());
                }
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| HedgeError::Format(e.to_string()))
}

/// One day of the delta-hedge residual regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    /// `C_t - C_{t+1} + delta (S_{t+1} - S_t)`.
    pub y: f64,
    /// Each feature times `S_{t+1} - S_t`, in [`FeatureVector::NAMES`] order.
    pub x: [f64; 8],
}

impl ResidualSample {
    pub fn new(c0: f64, c1: f64, s0: f64, s1: f64, delta: f64, features: &FeatureVector) -> Self {
        let ds = s1 - s0;
        ResidualSample {
            y: c0 - c1 + delta * ds,
            x: features.values().map(|f| f * ds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDataset {
    pub samples: Vec<ResidualSample>,
    /// `y` followed by the feature names.
    pub columns: Vec<String>,
    /// Pearson correlations; `None` where a column has zero variance.
    pub correlation: Vec<Vec<Option<f64>>>,
}

/// Residual samples over consecutive observed rows where both days have
/// features, plus their correlation matrix.
pub fn residual_dataset(contracts: &[(ChainEpisode, Vec<FeatureRow>)]) -> Result<ResidualDataset> {
    let mut samples = Vec::new();
    for (ep, rows) in contracts {
        for t in 0..ep.len().saturating_sub(1) {
            let (Ok(f0), Ok(_)) = (&rows[t].features, &rows[t + 1].features) else {
                continue;
            };
            let spec = OptionSpec::call(ep.strike, f0.tau)?;
            let delta = bs_delta(ep.closes[t], &spec, f0.sigma_impl)?;
            samples.push(ResidualSample::new(
                ep.mids[t],
                ep.mids[t + 1],
                ep.closes[t],
                ep.closes[t + 1],
                delta,
                f0,
            ));
        }
    }
    let columns: Vec<String> = std::iter::once("y")
        .chain(FeatureVector::NAMES)
        .map(str::to_string)
        .collect();
    let table: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| std::iter::once(s.y).chain(s.x).collect())
        .collect();
    Ok(ResidualDataset {
        correlation: pearson_matrix(&table, columns.len()),
        samples,
        columns,
    })
}

/// Pearson correlation matrix of the columns of `rows`. The diagonal is 1;
/// entries involving a constant column are `None`.
pub fn pearson_matrix(rows: &[Vec<f64>], width: usize) -> Vec<Vec<Option<f64>>> {
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..width).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; width]; width];
    for r in rows {
        for i in 0..width {
            for j in i..width {
                cov[i][j] += (r[i] - means[i]) * (r[j] - means[j]);
            }
        }
    }
    (0..width)
        .map(|i| {
            (0..width)
                .map(|j| {
                    let (a, b) = (i.min(j), i.max(j));
                    let denom = (cov[a][a] * cov[b][b]).sqrt();
                    if i == j {
                        (cov[i][i] > 0.0).then_some(1.0)
                    } else if denom > 0.0 {
                        Some((cov[a][b] / denom).clamp(-1.0, 1.0))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect()
}

/// How a real-data episode is closed out on its last observed day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Settlement {
    /// Settle at the final observed mid (contracts need not reach expiry).
    #[default]
    LastQuote,
    /// Settle at `max(S - K, 0)` on the last observed day.
    Intrinsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EnvOptions {
    #[serde(default)]
    pub settlement: Settlement,
    /// Keep contracts with missing trading days.
    #[serde(default)]
    pub include_gaps: bool,
}

/// Convert feature-complete contracts into hedging episodes priced at the
/// market mids. Contracts with a flagged row, fewer than two rows, or (by
/// default) a gap in the trading calendar are skipped.
pub fn episodes_to_env(
    contracts: &[(ChainEpisode, Vec<FeatureRow>)],
    history: &UnderlierHistory,
    options: &EnvOptions,
) -> Vec<HedgeEpisode> {
    contracts
        .iter()
        .filter(|(ep, rows)| {
            ep.len() >= 2
                && rows.iter().all(|r| r.features.is_ok())
                && (options.include_gaps || !ep.has_gap(history))
        })
        .filter_map(|(ep, rows)| {
            let features: Vec<FeatureVector> = rows.iter().map(|r| *r.features.as_ref().unwrap()).collect();
            let first = ep.dates[0];
            let times = ep.dates.iter().map(|d| (*d - first).num_days() as f64 / DAYS_PER_YEAR).collect();
            let taus: Vec<f64> = features.iter().map(|f| f.tau).collect();
            let mut option_prices = ep.mids.clone();
            if options.settlement == Settlement::Intrinsic {
                let last = ep.len() - 1;
                option_prices[last] = (ep.closes[last] - ep.strike).max(0.0);
            }
            let spec = OptionSpec::call(ep.strike, taus[0]).ok()?;
            Some(HedgeEpisode {
                path: PricePath {
                    times,
                    prices: ep.closes.clone(),
                    seed: 0,
                },
                spec,
                premium: option_prices[0],
                option_prices,
                taus,
                steps_per_day: 1,
                vol: features[0].sigma_impl,
                features: Some(features),
            })
        })
        .collect()
}

/// Everything `ingest` produces from one chain file.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub load: ChainLoad,
    pub history: UnderlierHistory,
    pub contracts: Vec<(ChainEpisode, Vec<FeatureRow>)>,
    pub episodes: Vec<HedgeEpisode>,
}

pub fn ingest(load: ChainLoad, options: &EnvOptions) -> Ingested {
    use rayon::prelude::*;
    let history = UnderlierHistory::from_rows(&load.rows);
    let contracts: Vec<_> = filter_universe(&load.rows)
        .into_par_iter()
        .map(|ep| {
            let rows = compute_features(&ep, &history);
            (ep, rows)
        })
        .collect();
    let episodes = episodes_to_env(&contracts, &history, options);
    Ingested {
        load,
        history,
        contracts,
        episodes,
    }
}

/// Quote rows for a simulated episode, one per day starting at `start`.
///
/// `history` closes are written on the days before `start` as quotes of a
/// one-year contract (which the universe filter drops), so the chain carries
/// enough underlier history for the volatility features. Quotes have
/// `bid = ask = price`.
pub fn synthetic_chain(episode: &HedgeEpisode, start: NaiveDate, history: &[f64]) -> Result<Vec<OptionQuoteRow>> {
    if episode.steps_per_day != 1 {
        return Err(HedgeError::Argument("synthetic chains need one step per day".into()));
    }
    let days = |n: i64| chrono::Duration::days(n);
    let mut rows = Vec::with_capacity(history.len() + episode.len());
    let h = history.len() as i64;
    let long_strike = history.first().copied().unwrap_or(episode.strike());
    let long_expiry = start + days(365);
    for (k, &close) in history.iter().enumerate() {
        let date = start - days(h - k as i64);
        let tau = (long_expiry - date).num_days() as f64 / DAYS_PER_YEAR;
        let price = bs_call_price(close, &OptionSpec::call(long_strike, tau)?, episode.vol)?;
        rows.push(OptionQuoteRow {
            quote_date: date,
            expiry: long_expiry,
            strike: long_strike,
            best_bid: price,
            best_ask: price,
            underlying_close: close,
        });
    }
    let expiry = start + days(episode.steps() as i64);
    for i in 0..episode.len() {
        rows.push(OptionQuoteRow {
            quote_date: start + days(i as i64),
            expiry,
            strike: episode.strike(),
            best_bid: episode.option(i),
            best_ask: episode.option(i),
            underlying_close: episode.stock(i),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, CostModel, HedgeState};
    use crate::market::{generate_episode, simulate_gbm, GbmParams};

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    const FIXTURE: &str = "\
quote_date,expiry,strike,right,best_bid,best_ask,underlying_close
2020-01-02,2020-01-24,100,call,10,12,105
2020-01-03,2020-01-24,100,call,9.5,10.5,104
2020-01-06,2020-01-24,100,C,8,9,103
2020-01-02,2020-02-21,110,call,1.2,1.4,105
2020-01-03,2020-02-21,110,call,1.1,1.3,104
";

    #[test]
    fn parses_fixture_without_rejects() {
        let load = parse_chain(FIXTURE.as_bytes()).unwrap();
        assert_eq!(load.rows.len(), 5);
        assert!(load.rejects.is_empty());
        assert_eq!(load.rows[0].mid(), 11.0);
        assert_eq!(load.rows[0].days_to_expiry(), 22);
    }

    #[test]
    fn bad_rows_are_rejected_with_reasons() {
        let text = "\
quote_date,expiry,strike,right,best_bid,best_ask,underlying_close
2020-01-02,2020-01-24,100,call,12,10,105
2020-01-02,2020-01-24,100,put,1,2,105
2020-01-02,2019-12-24,100,call,1,2,105
2020-13-02,2020-01-24,100,call,1,2,105
2020-01-02,2020-01-24,abc,call,1,2,105
2020-01-02,2020-01-24,100,call,1,2
";
        let load = parse_chain(text.as_bytes()).unwrap();
        assert!(load.rows.is_empty());
        let reasons: Vec<&str> = load.rejects.iter().map(|r| r.reason.as_str()).collect();
        assert_eq!(reasons[0], "crossed quote");
        assert!(reasons[1].starts_with("unsupported right"));
        assert_eq!(reasons[2], "expiry before quote date");
        assert!(reasons[3].starts_with("unparseable quote_date"));
        assert!(reasons[4].starts_with("unparseable strike"));
        assert!(reasons[5].starts_with("missing field"));
        assert_eq!(load.rejects[0].line, 2);
    }

    #[test]
    fn schema_error_names_missing_columns() {
        let err = parse_chain("quote_date,strike,right,best_bid\n".as_bytes()).unwrap_err();
        match err {
            HedgeError::Schema(cols) => {
                assert_eq!(cols, vec!["expiry", "best_ask", "underlying_close"]);
            }
            other => panic!("{other:?}"),
        }
        let empty = parse_chain(CHAIN_COLUMNS.join(",").as_bytes()).unwrap();
        assert!(empty.rows.is_empty() && empty.rejects.is_empty());
    }

    fn contract(start: &str, dte: i64, strike: f64, closes: &[f64]) -> Vec<OptionQuoteRow> {
        let start = date(start);
        let expiry = start + chrono::Duration::days(dte);
        closes
            .iter()
            .enumerate()
            .map(|(i, &c)| OptionQuoteRow {
                quote_date: start + chrono::Duration::days(i as i64),
                expiry,
                strike,
                best_bid: 1.0,
                best_ask: 1.0,
                underlying_close: c,
            })
            .collect()
    }

    #[test]
    fn universe_keeps_only_the_twenty_day_contract() {
        let mut rows = contract("2021-03-01", 10, 100.0, &[100.0, 101.0]);
        rows.extend(contract("2021-03-01", 20, 100.0, &[100.0, 125.0, 101.0]));
        rows.extend(contract("2021-03-01", 60, 100.0, &[100.0, 99.0]));
        let eps = filter_universe(&rows);
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].days_to_expiry[0], 20);
        // the S/K = 1.25 observation is dropped
        assert_eq!(eps[0].closes, vec![100.0, 101.0]);
    }

    #[test]
    fn universe_bounds_are_inclusive() {
        for (dte, keep) in [(14, false), (15, true), (40, true), (41, false), (45, false)] {
            let rows = contract("2021-03-01", dte, 100.0, &[100.0, 100.0]);
            assert_eq!(filter_universe(&rows).len(), keep as usize, "dte {dte}");
        }
        let edge = contract("2021-03-01", 20, 100.0, &[120.0, 80.0, 120.0000001]);
        assert_eq!(filter_universe(&edge)[0].len(), 2);
    }

    #[test]
    fn universe_filter_is_idempotent() {
        let mut rows = contract("2021-03-01", 16, 100.0, &[70.0, 90.0, 100.0, 130.0]);
        rows.extend(contract("2021-03-01", 42, 100.0, &[60.0, 70.0, 95.0]));
        rows.extend(contract("2021-03-02", 30, 105.0, &[104.0, 103.0]));
        let once = filter_universe(&rows);
        let back: Vec<OptionQuoteRow> = once.iter().flat_map(|e| e.quotes.clone()).collect();
        assert_eq!(filter_universe(&back), once);
        assert_eq!(once.len(), 3);
    }

    #[test]
    fn historical_vol_examples() {
        assert_eq!(historical_vol(&[50.0; 25], 20).unwrap(), 0.0);
        let mut closes = vec![100.0];
        for i in 0..20 {
            let r: f64 = if i % 2 == 0 { 0.01 } else { -0.01 };
            closes.push(closes[i] * r.exp());
        }
        // mean 0, sum of squares 20e-4
        let want = (20e-4f64 / 19.0).sqrt() * 252f64.sqrt();
        let got = historical_vol(&closes, 20).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.162869).abs() < 1e-6);
        let scaled: Vec<f64> = closes.iter().map(|c| c * 10.0).collect();
        assert!((historical_vol(&scaled, 20).unwrap() - got).abs() < 1e-12);
        assert!(historical_vol(&closes[..20], 20).is_err());
    }

    #[test]
    fn pearson_diagonal_and_degenerate_columns() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64, 3.0, -(i as f64)]).collect();
        let m = pearson_matrix(&rows, 4);
        assert_eq!(m[0][0], Some(1.0));
        assert_eq!(m[1][1], Some(1.0));
        assert_eq!(m[2][2], None);
        assert_eq!(m[0][2], None);
        assert!((m[0][3].unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(m[0][1], m[1][0]);
    }

    #[test]
    fn residual_sign_flips_with_price_move() {
        let f = FeatureVector {
            tau: 0.05,
            moneyness: 1.0,
            sigma_impl: 0.2,
            vega: 11.0,
            theta: -14.0,
            gamma: 0.07,
            sigma_20: 0.19,
            sigma_30: 0.21,
        };
        let up = ResidualSample::new(2.0, 2.0, 100.0, 101.0, 0.5, &f);
        let down = ResidualSample::new(2.0, 2.0, 100.0, 99.0, 0.5, &f);
        for k in 0..8 {
            assert_eq!(up.x[k], -down.x[k]);
        }
        assert_eq!(up.y, 0.5);
    }

    fn synthetic(seed: u64) -> (HedgeEpisode, Vec<OptionQuoteRow>) {
        let params = GbmParams::default();
        let ep = generate_episode(&params, 30, 1, seed).unwrap();
        let hist = simulate_gbm(&params, 40.0 / 365.0, 1.0 / 365.0, seed ^ 1).unwrap();
        let rows = synthetic_chain(&ep, date("2022-06-01"), &hist.prices).unwrap();
        (ep, rows)
    }

    #[test]
    fn synthetic_chain_round_trip() {
        let (ep, rows) = synthetic(17);
        let mut buf = Vec::new();
        write_chain_csv(&rows, &mut buf).unwrap();
        let load = parse_chain(buf.as_slice()).unwrap();
        assert_eq!(load.rows, rows);
        let out = ingest(load, &EnvOptions::default());
        assert_eq!(out.contracts.len(), 1);
        assert_eq!(out.episodes.len(), 1);
        let real = &out.episodes[0];
        for row in &out.contracts[0].1 {
            let f = row.features.as_ref().unwrap();
            assert!((f.sigma_impl - 0.2).abs() < 1e-4, "{}", f.sigma_impl);
        }
        let policy = |s: &HedgeState| (s.moneyness - 0.5).clamp(0.0, 1.0);
        let cost = CostModel::default();
        let a = rollout(&ep, &policy, &cost).unwrap();
        let b = rollout(real, &policy, &cost).unwrap();
        assert_eq!(a.transitions.len(), b.transitions.len());
        for (x, y) in a.transitions.iter().zip(&b.transitions) {
            assert!((x.reward - y.reward).abs() < 1e-9);
        }
    }

    #[test]
    fn residuals_of_bs_chain_are_small() {
        let (_, rows) = synthetic(23);
        let out = ingest(ChainLoad { rows, rejects: vec![] }, &EnvOptions::default());
        let data = residual_dataset(&out.contracts).unwrap();
        assert_eq!(data.samples.len(), 30);
        let (ep, rows) = &out.contracts[0];
        // gamma and theta carry the residual; skip the last days where the
        // expansion breaks down
        for (t, s) in data.samples.iter().enumerate().take(25) {
            let f = rows[t].features.as_ref().unwrap();
            let ds = ep.closes[t + 1] - ep.closes[t];
            let taylor = -(0.5 * f.gamma * ds * ds + f.theta / 365.0);
            assert!((s.y - taylor).abs() < 0.25 * taylor.abs() + 0.02, "t {t}: {} vs {taylor}", s.y);
        }
        for i in 0..data.columns.len() {
            if let Some(d) = data.correlation[i][i] {
                assert_eq!(d, 1.0);
            }
        }
    }

    #[test]
    fn gaps_are_excluded_by_default() {
        let (_, mut rows) = synthetic(5);
        // drop one day of the hedged contract but keep the underlier calendar
        let strike = rows.last().unwrap().strike;
        let expiry = rows.last().unwrap().expiry;
        let gap_day = rows.last().unwrap().quote_date - chrono::Duration::days(10);
        rows.retain(|r| !(r.expiry == expiry && r.strike == strike && r.quote_date == gap_day));
        rows.push(OptionQuoteRow {
            quote_date: gap_day,
            expiry: gap_day + chrono::Duration::days(300),
            strike: 1000.0,
            best_bid: 0.0,
            best_ask: 0.0,
            underlying_close: 100.0,
        });
        let load = ChainLoad { rows, rejects: vec![] };
        assert!(ingest(load.clone(), &EnvOptions::default()).episodes.is_empty());
        let opts = EnvOptions {
            include_gaps: true,
            ..Default::default()
        };
        assert_eq!(ingest(load, &opts).episodes.len(), 1);
        assert!(episodes_to_env(&[], &UnderlierHistory::default(), &EnvOptions::default()).is_empty());
    }

    #[test]
    fn short_history_is_flagged() {
        let params = GbmParams::default();
        let ep = generate_episode(&params, 20, 1, 3).unwrap();
        let rows = synthetic_chain(&ep, date("2022-06-01"), &[100.0; 5]).unwrap();
        let out = ingest(ChainLoad { rows, rejects: vec![] }, &EnvOptions::default());
        let flags = &out.contracts[0].1;
        assert!(flags[0].features.as_ref().unwrap_err().contains("insufficient history"));
        assert!(out.episodes.is_empty());
    }
}
