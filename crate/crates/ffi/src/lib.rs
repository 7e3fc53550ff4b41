//! C ABI over the `deephedge` crate.
//!
//! Every function returns a [`DhStatus`] and writes results through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`dh_last_error`]. Episodes and agents are opaque handles that must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use deephedge::agent::{load_actor, Actor};
use deephedge::analytics::{bs_call_price, bs_delta, bs_greeks, implied_vol, OptionSpec};
use deephedge::env::{rollout, CostModel, DeltaHedge, HedgePolicy, HedgeState};
use deephedge::market::{generate_episode, GbmParams, HedgeEpisode};
use deephedge::HedgeError;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    NoConvergence = 4,
    Io = 5,
    Format = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Black-Scholes sensitivities; theta per year, vega per unit volatility.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DhGreeks {
    pub delta: f64,
    pub gamma: f64,
    pub theta: f64,
    pub vega: f64,
}

/// A simulated hedging episode.
pub struct DhEpisode(HedgeEpisode);

/// A trained hedging policy loaded from a checkpoint directory.
pub struct DhAgent(Actor);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &HedgeError) -> DhStatus {
    match e {
        HedgeError::Domain(_) | HedgeError::Degenerate(_) | HedgeError::Bounds { .. } => DhStatus::Domain,
        HedgeError::Convergence { .. } => DhStatus::NoConvergence,
        HedgeError::Io { .. } => DhStatus::Io,
        HedgeError::Format(_) | HedgeError::Schema(_) | HedgeError::Shape(_) => DhStatus::Format,
        HedgeError::Index { .. } => DhStatus::OutOfRange,
        HedgeError::Argument(_) | HedgeError::Config(_) => DhStatus::InvalidArgument,
    }
}

struct Fail(DhStatus, String);

impl From<HedgeError> for Fail {
    fn from(e: HedgeError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DhStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DhStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DhStatus::Panic
        }
    }
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn spec(strike: f64, tau: f64, rate: f64) -> Result<OptionSpec, Fail> {
    let s = OptionSpec::call(strike, tau)?.with_rate(rate);
    s.validate()?;
    Ok(s)
}

/// European call price. `tau` in years.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_bs_call_price(spot: f64, strike: f64, tau: f64, vol: f64, rate: f64, out: *mut f64) -> DhStatus {
    guard(|| write(out, bs_call_price(spot, &spec(strike, tau, rate)?, vol)?))
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_bs_delta(spot: f64, strike: f64, tau: f64, vol: f64, rate: f64, out: *mut f64) -> DhStatus {
    guard(|| write(out, bs_delta(spot, &spec(strike, tau, rate)?, vol)?))
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_bs_greeks(spot: f64, strike: f64, tau: f64, vol: f64, rate: f64, out: *mut DhGreeks) -> DhStatus {
    guard(|| {
        let g = bs_greeks(spot, &spec(strike, tau, rate)?, vol)?;
        write(
            out,
            DhGreeks {
                delta: g.delta,
                gamma: g.gamma,
                theta: g.theta,
                vega: g.vega,
            },
        )
    })
}

/// Volatility reproducing `price`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_implied_vol(price: f64, spot: f64, strike: f64, tau: f64, rate: f64, out: *mut f64) -> DhStatus {
    guard(|| write(out, implied_vol(price, spot, &spec(strike, tau, rate)?)?))
}

/// Simulate one at-the-money episode. Free the handle with [`dh_episode_free`].
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_episode_generate(
    drift: f64,
    vol: f64,
    initial_price: f64,
    maturity_days: u32,
    steps_per_day: u32,
    seed: u64,
    out: *mut *mut DhEpisode,
) -> DhStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let params = GbmParams {
            drift,
            vol,
            initial_price,
        };
        let ep = generate_episode(&params, maturity_days, steps_per_day, seed)?;
        write(out, Box::into_raw(Box::new(DhEpisode(ep))))
    })
}

/// Number of grid nodes (steps + 1).
///
/// # Safety
/// `episode` must come from [`dh_episode_generate`]; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_episode_len(episode: *const DhEpisode, out: *mut usize) -> DhStatus {
    guard(|| write(out, borrow(episode, "episode")?.0.len()))
}

unsafe fn node<'a>(episode: *const DhEpisode, index: usize) -> Result<&'a HedgeEpisode, Fail> {
    let ep = &borrow(episode, "episode")?.0;
    if index >= ep.len() {
        return Err(HedgeError::Index { index, len: ep.len() }.into());
    }
    Ok(ep)
}

/// # Safety
/// `episode` must come from [`dh_episode_generate`]; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_episode_stock(episode: *const DhEpisode, index: usize, out: *mut f64) -> DhStatus {
    guard(|| write(out, node(episode, index)?.stock(index)))
}

/// # Safety
/// `episode` must come from [`dh_episode_generate`]; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_episode_option(episode: *const DhEpisode, index: usize, out: *mut f64) -> DhStatus {
    guard(|| write(out, node(episode, index)?.option(index)))
}

/// Premium received at the start of the episode.
///
/// # Safety
/// `episode` must come from [`dh_episode_generate`]; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_episode_premium(episode: *const DhEpisode, out: *mut f64) -> DhStatus {
    guard(|| write(out, borrow(episode, "episode")?.0.premium))
}

/// Total P&L of hedging the episode with `agent`, or with the
/// Black-Scholes delta when `agent` is null.
///
/// # Safety
/// Handles must be null or live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_episode_hedge_pnl(
    episode: *const DhEpisode,
    agent: *const DhAgent,
    cost_rate: f64,
    out: *mut f64,
) -> DhStatus {
    guard(|| {
        let ep = &borrow(episode, "episode")?.0;
        let cost = CostModel::new(cost_rate)?;
        let policy: &dyn HedgePolicy = match agent.as_ref() {
            Some(a) => &a.0,
            None => &DeltaHedge,
        };
        write(out, rollout(ep, policy, &cost)?.total_pnl)
    })
}

/// # Safety
/// `episode` must be null or come from [`dh_episode_generate`], freed once.
#[no_mangle]
pub unsafe extern "C" fn dh_episode_free(episode: *mut DhEpisode) {
    if !episode.is_null() {
        drop(Box::from_raw(episode));
    }
}

/// Load the actor of a checkpoint directory written by `deephedge train`.
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dh_agent_load(dir: *const c_char, out: *mut *mut DhAgent) -> DhStatus {
    guard(|| {
        if dir.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let path = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| Fail(DhStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let actor = load_actor(Path::new(path))?;
        write(out, Box::into_raw(Box::new(DhAgent(actor))))
    })
}

/// Target hedge position in [0, 1] and predicted reward variance for a
/// simulated state. `tau` in years, `moneyness` = spot / strike.
///
/// # Safety
/// `agent` must be live; `position_out` and `sigma2_out` valid for writes
/// (`sigma2_out` may be null).
#[no_mangle]
pub unsafe extern "C" fn dh_agent_act(
    agent: *const DhAgent,
    tau: f64,
    moneyness: f64,
    position: f64,
    vol: f64,
    position_out: *mut f64,
    sigma2_out: *mut f64,
) -> DhStatus {
    guard(|| {
        let actor = &borrow(agent, "agent")?.0;
        let state = HedgeState::simulated(tau, moneyness, position, vol)?;
        write(position_out, actor.position(&state))?;
        if !sigma2_out.is_null() {
            sigma2_out.write(actor.sigma2(&state));
        }
        Ok(())
    })
}

/// # Safety
/// `agent` must be null or come from [`dh_agent_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn dh_agent_free(agent: *mut DhAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}
