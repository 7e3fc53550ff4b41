//! Deep hedging of a short European call with an uncertainty-aware DDPG agent.
//!
//! The crate is organised bottom-up:
//!
//! - [`analytics`]: Black-Scholes price, delta, greeks and implied volatility.
//! - [`market`]: seeded GBM paths and simulated hedging episodes.
//! - [`env`]: the hedging MDP (cash account, fees, rewards, rollouts).
//! - [`nn`]: a small dense-network engine with dropout, Gaussian NLL and Adam.
//! - [`agent`]: the DDPG learner with an aleatoric variance head and MC-dropout critic.
//! - [`eval`]: P&L reports, strategy tables, heatmaps and calibration bins.
//! - [`data`]: option-chain ingestion, features and the delta-residual dataset.
//! - [`cli`]: the `deephedge` command-line workflows.

pub mod agent;
pub mod analytics;
pub mod cli;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod market;
pub mod nn;
pub mod seed;

pub use error::{HedgeError, Result};

/// Crate version embedded in every emitted report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
