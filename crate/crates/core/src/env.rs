//! The hedging MDP for a short call.
//!
//! The seller receives the premium as cash at `t = 0`, holds `N_t` shares and
//! rebalances to an absolute target position in `[0, 1]` at every node. Each
//! step pays `R_t = C_t - C_{t+1} + N_{t+1}(S_{t+1} - S_t) - f(S_t, dN)`; at the
//! last step the option is cash-settled at the final price and any remaining
//! shares are sold at `S_T`, paying the fee once more.

use serde::{Deserialize, Serialize};

use crate::analytics::{bs_delta, bs_greeks, OptionSpec, DAYS_PER_YEAR};
use crate::error::{HedgeError, Result};
use crate::market::HedgeEpisode;

/// Number of network inputs produced by [`HedgeState::features`].
pub const STATE_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Proportional fee on traded notional.
    pub rate: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { rate: 0.01 }
    }
}

impl CostModel {
    pub fn new(rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(HedgeError::Domain(format!("cost rate must be >= 0, got {rate}")));
        }
        Ok(CostModel { rate })
    }

    pub fn free() -> Self {
        CostModel { rate: 0.0 }
    }

    /// `kappa * spot * |delta_n|`.
    pub fn transaction_cost(&self, spot: f64, delta_n: f64) -> f64 {
        self.rate * spot * delta_n.abs()
    }
}

/// Observation at one node. Greeks are per unit strike (`gamma * K`,
/// `theta / K`, `vega / K`) so states are comparable across strikes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeState {
    pub tau: f64,
    pub moneyness: f64,
    pub position: f64,
    pub sigma_impl: f64,
    pub sigma_20: f64,
    pub sigma_30: f64,
    pub gamma: f64,
    pub theta: f64,
    pub vega: f64,
}

impl HedgeState {
    /// State of a constant-volatility market, as in simulation.
    pub fn simulated(tau: f64, moneyness: f64, position: f64, vol: f64) -> Result<Self> {
        let (gamma, theta, vega) = unit_greeks(moneyness, tau, vol)?;
        Ok(HedgeState {
            tau,
            moneyness,
            position,
            sigma_impl: vol,
            sigma_20: vol,
            sigma_30: vol,
            gamma,
            theta,
            vega,
        })
    }

    pub fn with_position(mut self, position: f64) -> Self {
        self.position = position;
        self
    }

    /// Black-Scholes delta at the state's implied volatility.
    pub fn bs_delta(&self) -> f64 {
        let spec = OptionSpec {
            strike: 1.0,
            time_to_maturity: self.tau.max(0.0),
            rate: 0.0,
            is_call: true,
        };
        bs_delta(self.moneyness, &spec, self.sigma_impl.max(0.0)).unwrap_or(0.0)
    }

    /// Scaled network input.
    pub fn features(&self) -> [f64; STATE_DIM] {
        let raw = [
            self.tau * DAYS_PER_YEAR / 30.0,
            (self.moneyness - 1.0) * 10.0,
            self.position,
            self.sigma_impl * 5.0,
            self.sigma_20 * 5.0,
            self.sigma_30 * 5.0,
            self.gamma * 0.1,
            self.theta,
            self.vega * 10.0,
        ];
        raw.map(|x| if x.is_finite() { x.clamp(-10.0, 10.0) } else { 0.0 })
    }
}

fn unit_greeks(moneyness: f64, tau: f64, vol: f64) -> Result<(f64, f64, f64)> {
    if tau <= 0.0 || vol <= 0.0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let g = bs_greeks(moneyness, &OptionSpec::call(1.0, tau)?, vol)?;
    Ok((g.gamma, g.theta, g.vega))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountState {
    pub cash: f64,
    pub position: f64,
    pub portfolio: f64,
}

impl AccountState {
    /// Short one call: premium in cash, no shares, zero portfolio value.
    pub fn open(episode: &HedgeEpisode) -> Self {
        AccountState {
            cash: episode.premium,
            position: 0.0,
            portfolio: episode.premium - episode.option(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub account: AccountState,
    pub done: bool,
    /// The requested position was outside `[0, 1]` and was clipped.
    pub clipped: bool,
}

pub fn step(
    episode: &HedgeEpisode,
    account: &AccountState,
    t_index: usize,
    new_position: f64,
    cost: &CostModel,
) -> Result<StepOutcome> {
    let steps = episode.steps();
    if t_index >= steps {
        return Err(HedgeError::Index {
            index: t_index,
            len: steps,
        });
    }
    let target = clip_position(new_position);
    let clipped = target != new_position;

    let (s0, s1) = (episode.stock(t_index), episode.stock(t_index + 1));
    let (c0, c1) = (episode.option(t_index), episode.option(t_index + 1));
    let traded = target - account.position;
    let fee = cost.transaction_cost(s0, traded);
    let mut reward = c0 - c1 + target * (s1 - s0) - fee;
    let mut cash = account.cash - s0 * traded - fee;
    let mut position = target;

    let done = t_index + 1 == steps;
    if done {
        let exit_fee = cost.transaction_cost(s1, position);
        cash += s1 * position - exit_fee;
        reward -= exit_fee;
        position = 0.0;
    }
    Ok(StepOutcome {
        reward,
        account: AccountState {
            cash,
            position,
            portfolio: cash + s1 * position - c1,
        },
        done,
        clipped,
    })
}

/// Clamp a requested position into `[0, 1]`; NaN maps to no position.
pub fn clip_position(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// `r - (lambda / 2) r^2`, a single-sample mean-variance reward.
pub fn risk_adjusted_reward(reward: f64, lambda: f64) -> f64 {
    reward - 0.5 * lambda * reward * reward
}

pub fn build_state(episode: &HedgeEpisode, t_index: usize, position: f64) -> Result<HedgeState> {
    if t_index >= episode.len() {
        return Err(HedgeError::Index {
            index: t_index,
            len: episode.len(),
        });
    }
    let strike = episode.strike();
    match &episode.features {
        Some(features) => {
            let f = features.get(t_index).ok_or(HedgeError::Index {
                index: t_index,
                len: features.len(),
            })?;
            Ok(HedgeState {
                tau: f.tau,
                moneyness: f.moneyness,
                position,
                sigma_impl: f.sigma_impl,
                sigma_20: f.sigma_20,
                sigma_30: f.sigma_30,
                gamma: f.gamma * strike,
                theta: f.theta / strike,
                vega: f.vega / strike,
            })
        }
        None => HedgeState::simulated(
            episode.taus[t_index],
            episode.stock(t_index) / strike,
            position,
            episode.vol,
        ),
    }
}

/// A hedging rule mapping the current state to a target position.
pub trait HedgePolicy: Sync {
    fn position(&self, state: &HedgeState) -> f64;
}

impl<F> HedgePolicy for F
where
    F: Fn(&HedgeState) -> f64 + Sync,
{
    fn position(&self, state: &HedgeState) -> f64 {
        self(state)
    }
}

/// Never hedge: the naked seller.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHedge;

impl HedgePolicy for NoHedge {
    fn position(&self, _: &HedgeState) -> f64 {
        0.0
    }
}

/// Hold the Black-Scholes delta at the state's implied volatility.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeltaHedge;

impl HedgePolicy for DeltaHedge {
    fn position(&self, state: &HedgeState) -> f64 {
        state.bs_delta()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: HedgeState,
    pub action: f64,
    pub reward: f64,
    pub next_state: HedgeState,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub total_pnl: f64,
    /// Account after each step.
    pub accounts: Vec<AccountState>,
}

pub fn rollout(episode: &HedgeEpisode, policy: &dyn HedgePolicy, cost: &CostModel) -> Result<Rollout> {
    let steps = episode.steps();
    let mut account = AccountState::open(episode);
    let mut transitions = Vec::with_capacity(steps);
    let mut accounts = Vec::with_capacity(steps);
    let mut total = 0.0;
    let mut state = build_state(episode, 0, account.position)?;
    for t in 0..steps {
        let action = policy.position(&state);
        let out = step(episode, &account, t, action, cost)?;
        let next_state = build_state(episode, t + 1, out.account.position)?;
        transitions.push(Transition {
            state,
            action: clip_position(action),
            reward: out.reward,
            next_state,
            done: out.done,
        });
        total += out.reward;
        account = out.account;
        accounts.push(account);
        state = next_state;
    }
    Ok(Rollout {
        transitions,
        total_pnl: total,
        accounts,
    })
}
