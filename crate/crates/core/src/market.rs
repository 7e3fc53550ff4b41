//! Seeded geometric Brownian motion and simulated hedging episodes.
//!
//! Paths use the exact log-normal update
//! `S_{t+dt} = S_t exp((mu - sigma^2/2) dt + sigma sqrt(dt) Z)`, accumulated in
//! log space, with `Z` drawn by inverse-CDF transform of a ChaCha stream.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::analytics::{bs_call_price, OptionSpec, DAYS_PER_YEAR};
use crate::data::FeatureVector;
use crate::error::{HedgeError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub drift: f64,
    pub vol: f64,
    pub initial_price: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            drift: 0.05,
            vol: 0.2,
            initial_price: 100.0,
        }
    }
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.vol >= 0.0 && self.vol.is_finite()) {
            return Err(HedgeError::Domain(format!("GBM volatility must be >= 0, got {}", self.vol)));
        }
        if !(self.initial_price > 0.0 && self.initial_price.is_finite()) {
            return Err(HedgeError::Domain(format!(
                "initial price must be > 0, got {}",
                self.initial_price
            )));
        }
        if !self.drift.is_finite() {
            return Err(HedgeError::Domain("drift must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    pub times: Vec<f64>,
    pub prices: Vec<f64>,
    pub seed: u64,
}

impl PricePath {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn terminal(&self) -> f64 {
        *self.prices.last().expect("non-empty path")
    }
}

/// One hedging problem: a stock path, the sold option's price series and the
/// time to expiry at every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeEpisode {
    pub path: PricePath,
    /// Strike and initial maturity.
    pub spec: OptionSpec,
    pub option_prices: Vec<f64>,
    /// Years to expiry at each node.
    pub taus: Vec<f64>,
    pub steps_per_day: u32,
    pub premium: f64,
    /// Volatility the option prices were generated with (simulation mode).
    pub vol: f64,
    /// Observed per-node features (real-data mode); `None` in simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<FeatureVector>>,
}

impl HedgeEpisode {
    /// Number of grid nodes (steps + 1).
    pub fn len(&self) -> usize {
        self.option_prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.option_prices.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn stock(&self, i: usize) -> f64 {
        self.path.prices[i]
    }

    pub fn option(&self, i: usize) -> f64 {
        self.option_prices[i]
    }

    pub fn strike(&self) -> f64 {
        self.spec.strike
    }
}

/// A standard normal variate by inverse-CDF transform of one uniform draw.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
        }
    }
}

pub fn simulate_gbm(params: &GbmParams, horizon: f64, dt: f64, seed: u64) -> Result<PricePath> {
    params.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(HedgeError::Domain(format!("dt must be positive, got {dt}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) || dt > horizon * (1.0 + 1e-12) {
        return Err(HedgeError::Domain(format!(
            "need 0 < dt <= horizon, got dt = {dt}, horizon = {horizon}"
        )));
    }
    let steps = ((horizon / dt).round() as usize).max(1);
    let mut rng = seed::rng(seed);
    let drift = (params.drift - 0.5 * params.vol * params.vol) * dt;
    let diffusion = params.vol * dt.sqrt();

    let mut times = Vec::with_capacity(steps + 1);
    let mut prices = Vec::with_capacity(steps + 1);
    times.push(0.0);
    prices.push(params.initial_price);
    let mut log_return = 0.0;
    for i in 1..=steps {
        log_return += drift + diffusion * standard_normal(&mut rng);
        times.push(i as f64 * dt);
        prices.push(params.initial_price * log_return.exp());
    }
    Ok(PricePath { times, prices, seed })
}

/// Simulate an at-the-money call episode of `maturity_days` calendar days,
/// rebalanced `steps_per_day` times per day.
pub fn generate_episode(
    params: &GbmParams,
    maturity_days: u32,
    steps_per_day: u32,
    seed: u64,
) -> Result<HedgeEpisode> {
    if !(1..=365).contains(&maturity_days) {
        return Err(HedgeError::Domain(format!(
            "maturity must be within [1, 365] days, got {maturity_days}"
        )));
    }
    if steps_per_day == 0 {
        return Err(HedgeError::Domain("steps_per_day must be >= 1".into()));
    }
    let steps = (maturity_days * steps_per_day) as usize;
    let dt = 1.0 / (DAYS_PER_YEAR * steps_per_day as f64);
    let horizon = maturity_days as f64 / DAYS_PER_YEAR;
    let path = simulate_gbm(params, horizon, dt, seed)?;
    debug_assert_eq!(path.len(), steps + 1);

    let spec = OptionSpec::call(params.initial_price, horizon)?;
    let taus: Vec<f64> = (0..=steps).map(|i| (steps - i) as f64 * dt).collect();
    let option_prices = path
        .prices
        .iter()
        .zip(&taus)
        .map(|(&s, &tau)| bs_call_price(s, &spec.with_maturity(tau), params.vol))
        .collect::<Result<Vec<_>>>()?;
    Ok(HedgeEpisode {
        premium: option_prices[0],
        path,
        spec,
        option_prices,
        taus,
        steps_per_day,
        vol: params.vol,
        features: None,
    })
}

/// Episode settings shared by simulation, training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeParams {
    pub market: GbmParams,
    pub maturity_days: u32,
    pub steps_per_day: u32,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        EpisodeParams {
            market: GbmParams::default(),
            maturity_days: 30,
            steps_per_day: 1,
        }
    }
}

impl EpisodeParams {
    pub fn generate(&self, seed: u64) -> Result<HedgeEpisode> {
        generate_episode(&self.market, self.maturity_days, self.steps_per_day, seed)
    }

    /// `count` episodes whose seeds are derived from `(master, purpose, index)`.
    pub fn generate_batch(&self, master: u64, purpose: u64, count: usize) -> Result<Vec<HedgeEpisode>> {
        use rayon::prelude::*;
        (0..count)
            .into_par_iter()
            .map(|i| self.generate(seed::derive(master, purpose, i as u64)))
            .collect()
    }
}
