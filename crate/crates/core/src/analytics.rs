//! Closed-form Black-Scholes analytics for European calls.
//!
//! Time is measured in years of [`DAYS_PER_YEAR`] calendar days. Expiry
//! (`tau == 0`) and zero volatility are handled as explicit intrinsic-value
//! branches rather than limits of `d1`/`d2`.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{HedgeError, Result};

/// Calendar days per year used to convert day counts into `tau`.
pub const DAYS_PER_YEAR: f64 = 365.0;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

const IV_MIN: f64 = 1e-4;
const IV_MAX: f64 = 5.0;
/// Relative to the quote, so far out-of-the-money prices still pin the volatility.
const IV_PRICE_TOL: f64 = 1e-12;
const IV_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    /// Years until expiry.
    pub time_to_maturity: f64,
    #[serde(default)]
    pub rate: f64,
    #[serde(default = "default_true")]
    pub is_call: bool,
}

fn default_true() -> bool {
    true
}

impl OptionSpec {
    /// A call with zero rate.
    pub fn call(strike: f64, time_to_maturity: f64) -> Result<Self> {
        let spec = OptionSpec {
            strike,
            time_to_maturity,
            rate: 0.0,
            is_call: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate = rate;
        self
    }

    pub fn with_maturity(mut self, time_to_maturity: f64) -> Self {
        self.time_to_maturity = time_to_maturity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(HedgeError::Domain(format!("strike must be positive, got {}", self.strike)));
        }
        if !(self.time_to_maturity >= 0.0 && self.time_to_maturity.is_finite()) {
            return Err(HedgeError::Domain(format!(
                "time to maturity must be non-negative, got {}",
                self.time_to_maturity
            )));
        }
        if !self.rate.is_finite() {
            return Err(HedgeError::Domain("rate must be finite".into()));
        }
        if !self.is_call {
            return Err(HedgeError::Domain("only calls are supported".into()));
        }
        Ok(())
    }

    fn discounted_strike(&self) -> f64 {
        self.strike * (-self.rate * self.time_to_maturity).exp()
    }

    /// `max(spot - K e^{-r tau}, 0)`.
    pub fn intrinsic(&self, spot: f64) -> f64 {
        (spot - self.discounted_strike()).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Greeks {
    pub delta: f64,
    pub gamma: f64,
    /// Per year, as `dC/dt` (negative for a call with zero rate).
    pub theta: f64,
    /// Per unit of volatility.
    pub vega: f64,
}

/// Standard normal CDF, rejecting non-finite input.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(HedgeError::Domain(format!("normal CDF of non-finite value {x}")));
    }
    Ok(norm_cdf(x))
}

#[inline]
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

#[inline]
pub(crate) fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn check_inputs(spot: f64, spec: &OptionSpec, vol: f64) -> Result<()> {
    spec.validate()?;
    if !(spot > 0.0 && spot.is_finite()) {
        return Err(HedgeError::Domain(format!("spot must be positive, got {spot}")));
    }
    if !(vol >= 0.0 && vol.is_finite()) {
        return Err(HedgeError::Domain(format!("volatility must be non-negative, got {vol}")));
    }
    Ok(())
}

fn is_degenerate(spec: &OptionSpec, vol: f64) -> bool {
    spec.time_to_maturity == 0.0 || vol == 0.0
}

fn d1_d2(spot: f64, spec: &OptionSpec, vol: f64) -> (f64, f64) {
    let tau = spec.time_to_maturity;
    let vol_sqrt_tau = vol * tau.sqrt();
    let d1 = ((spot / spec.strike).ln() + (spec.rate + 0.5 * vol * vol) * tau) / vol_sqrt_tau;
    (d1, d1 - vol_sqrt_tau)
}

pub fn bs_call_price(spot: f64, spec: &OptionSpec, vol: f64) -> Result<f64> {
    check_inputs(spot, spec, vol)?;
    if is_degenerate(spec, vol) {
        return Ok(spec.intrinsic(spot));
    }
    let (d1, d2) = d1_d2(spot, spec, vol);
    let price = spot * norm_cdf(d1) - spec.discounted_strike() * norm_cdf(d2);
    // rounding can push deep out-of-the-money prices a hair below the bound
    Ok(price.clamp(spec.intrinsic(spot), spot))
}

/// `Phi(d1)`; a step function at expiry (0.5 exactly at the money).
pub fn bs_delta(spot: f64, spec: &OptionSpec, vol: f64) -> Result<f64> {
    check_inputs(spot, spec, vol)?;
    if is_degenerate(spec, vol) {
        let k = spec.discounted_strike();
        return Ok(if spot > k {
            1.0
        } else if spot < k {
            0.0
        } else {
            0.5
        });
    }
    Ok(norm_cdf(d1_d2(spot, spec, vol).0))
}

pub fn bs_greeks(spot: f64, spec: &OptionSpec, vol: f64) -> Result<Greeks> {
    check_inputs(spot, spec, vol)?;
    if is_degenerate(spec, vol) {
        return Err(HedgeError::Degenerate(format!(
            "greeks undefined at tau = {}, vol = {}",
            spec.time_to_maturity, vol
        )));
    }
    let tau = spec.time_to_maturity;
    let sqrt_tau = tau.sqrt();
    let (d1, d2) = d1_d2(spot, spec, vol);
    let pdf = norm_pdf(d1);
    Ok(Greeks {
        delta: norm_cdf(d1),
        gamma: pdf / (spot * vol * sqrt_tau),
        theta: -spot * pdf * vol / (2.0 * sqrt_tau) - spec.rate * spec.discounted_strike() * norm_cdf(d2),
        vega: spot * pdf * sqrt_tau,
    })
}

/// Volatility that reproduces `market_price`.
///
/// Safeguarded Newton on vega inside the bracket `[1e-4, 5]`; any step that
/// leaves the current bracket is replaced by bisection. Converges to a price
/// error of 1e-12 relative to the quote.
pub fn implied_vol(market_price: f64, spot: f64, spec: &OptionSpec) -> Result<f64> {
    check_inputs(spot, spec, 0.0)?;
    if spec.time_to_maturity == 0.0 {
        return Err(HedgeError::Degenerate("implied volatility at expiry".into()));
    }
    let lower = spec.intrinsic(spot);
    if !(market_price > lower && market_price < spot) {
        return Err(HedgeError::Bounds {
            price: market_price,
            lower,
            upper: spot,
        });
    }
    let objective = |vol: f64| -> Result<f64> { Ok(bs_call_price(spot, spec, vol)? - market_price) };

    let (mut lo, mut hi) = (IV_MIN, IV_MAX);
    let f_lo = objective(lo)?;
    let f_hi = objective(hi)?;
    if f_lo > 0.0 || f_hi < 0.0 {
        // the quote implies a volatility outside the solver range
        return Err(HedgeError::Bounds {
            price: market_price,
            lower: f_lo + market_price,
            upper: f_hi + market_price,
        });
    }

    // Brenner-Subrahmanyam starting point
    let mut vol = ((2.0 * std::f64::consts::PI / spec.time_to_maturity).sqrt() * market_price / spot)
        .clamp(IV_MIN, IV_MAX);
    for _ in 0..IV_MAX_ITER {
        let f = objective(vol)?;
        if f.abs() <= IV_PRICE_TOL * market_price || hi - lo <= 1e-15 * hi {
            let vega = bs_greeks(spot, spec, vol)?.vega;
            let polished = vol - f / vega;
            if vega > 0.0 && polished > lo && polished < hi {
                return Ok(polished);
            }
            return Ok(vol);
        }
        if f > 0.0 {
            hi = vol;
        } else {
            lo = vol;
        }
        let vega = bs_greeks(spot, spec, vol)?.vega;
        let newton = vol - f / vega;
        vol = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(HedgeError::Convergence {
        iterations: IV_MAX_ITER,
    })
}
