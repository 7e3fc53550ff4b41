//! DDPG with an aleatoric variance head and an MC-dropout critic.
//!
//! The actor maps a state to a target position through a sigmoid head and,
//! through a separate small network, to a log-variance `lv(s)` of the TD
//! residual. The critic scores `(state, action)` and carries dropout on its
//! hidden layers so repeated stochastic passes give an epistemic variance.
//!
//! Critic loss per sample is `0.5 e^{-lv} (y - Q)^2 + 0.5 lv`; the critic sees
//! only the precision-weighted TD term and the variance head sees the whole
//! loss with the residual held fixed. The plain variant uses `0.5 (y - Q)^2`.

mod replay;
mod train;

pub use replay::{Batch, ReplayBuffer, Stored};
pub use train::{
    load_actor, load_bundle, save_bundle, shaped_reward, train, write_train_log, Bundle, EpisodeSource,
    SimulatedEpisodes, TrainLogRow, TrainOutcome,
};

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{HedgePolicy, HedgeState, STATE_DIM};
use crate::error::{HedgeError, Result};
use crate::market::standard_normal;
use crate::nn::{
    gaussian_nll, soft_update, Activation, AdamConfig, AdamState, DenseNet, DropoutMask, NetDocument,
    FORMAT_VERSION, LOG_VAR_MAX, LOG_VAR_MIN,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Mean-squared TD loss, no dropout, unit variance.
    Ddpg,
    /// Precision-weighted TD loss with a learned variance head.
    DdpgUncertainty,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ddpg => "ddpg",
            Variant::DdpgUncertainty => "ddpg-uncertainty",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ddpg" => Ok(Variant::Ddpg),
            "ddpg-uncertainty" => Ok(Variant::DdpgUncertainty),
            other => Err(HedgeError::Argument(format!(
                "unknown variant {other:?} (expected ddpg or ddpg-uncertainty)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub episodes: usize,
    pub discount: f64,
    pub soft_update_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup: usize,
    /// Environment steps between gradient updates.
    pub update_every: usize,
    pub noise_start: f64,
    pub noise_end: f64,
    /// Critic hidden-layer dropout (forced to 0 for the plain variant).
    pub dropout: f64,
    pub mc_passes: usize,
    /// Weight of `sqrt(Var Q)` subtracted in the actor objective.
    pub epistemic_penalty: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub logvar_lr: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub logvar_hidden: Vec<usize>,
    /// Pin the variance head at `lv = 0` (unit variance) and never train it.
    pub freeze_logvar: bool,
    /// Divide rewards by the episode premium before learning.
    pub normalize_rewards: bool,
    /// Multiplier applied after normalisation.
    pub reward_scale: f64,
    /// `lambda` of the per-step mean-variance reward.
    pub risk_aversion: f64,
    /// Proportional fee during training.
    pub cost_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::DdpgUncertainty,
            episodes: 8000,
            discount: 0.99,
            soft_update_rate: 0.005,
            batch_size: 128,
            buffer_capacity: 200_000,
            warmup: 1000,
            update_every: 1,
            noise_start: 0.15,
            noise_end: 0.02,
            dropout: 0.1,
            mc_passes: 30,
            epistemic_penalty: 0.0,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            logvar_lr: 1e-3,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            logvar_hidden: vec![32],
            freeze_logvar: false,
            normalize_rewards: true,
            reward_scale: 1.0,
            risk_aversion: 0.0,
            cost_rate: 0.01,
        }
    }
}

impl TrainConfig {
    /// Config for `variant`, applying the plain variant's fixed settings.
    pub fn for_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        if variant == Variant::Ddpg {
            self.dropout = 0.0;
            self.freeze_logvar = true;
        }
        self
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        check((0.0..=1.0).contains(&self.discount), format!("discount {} outside [0, 1]", self.discount));
        check(
            self.soft_update_rate > 0.0 && self.soft_update_rate <= 1.0,
            format!("soft_update_rate {} outside (0, 1]", self.soft_update_rate),
        );
        check(self.batch_size >= 1, "batch_size must be >= 1".into());
        check(
            self.buffer_capacity >= self.batch_size,
            "buffer_capacity must be >= batch_size".into(),
        );
        check(self.update_every >= 1, "update_every must be >= 1".into());
        check(
            self.noise_start >= 0.0 && self.noise_end >= 0.0,
            "exploration noise must be >= 0".into(),
        );
        check((0.0..1.0).contains(&self.dropout), format!("dropout {} outside [0, 1)", self.dropout));
        check(self.mc_passes >= 2, "mc_passes must be >= 2".into());
        check(self.epistemic_penalty >= 0.0, "epistemic_penalty must be >= 0".into());
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("logvar_lr", self.logvar_lr),
        ] {
            check(lr > 0.0 && lr.is_finite(), format!("{name} must be positive"));
        }
        for (name, h) in [
            ("actor_hidden", &self.actor_hidden),
            ("critic_hidden", &self.critic_hidden),
            ("logvar_hidden", &self.logvar_hidden),
        ] {
            check(!h.is_empty() && h.iter().all(|&d| d > 0), format!("{name} needs positive widths"));
        }
        check(self.reward_scale > 0.0, "reward_scale must be positive".into());
        check(self.risk_aversion >= 0.0, "risk_aversion must be >= 0".into());
        check(self.cost_rate >= 0.0, "cost_rate must be >= 0".into());
        if self.variant == Variant::Ddpg {
            check(self.dropout == 0.0, "the ddpg variant runs without dropout".into());
            check(self.freeze_logvar, "the ddpg variant keeps the variance head frozen".into());
        }
        errs
    }

    /// Exploration std for episode `index`, decaying linearly.
    pub fn noise_at(&self, index: usize) -> f64 {
        let frac = if self.episodes > 1 {
            index as f64 / (self.episodes - 1) as f64
        } else {
            0.0
        };
        self.noise_start + (self.noise_end - self.noise_start) * frac.min(1.0)
    }
}

/// Policy network plus the state-only log-variance network.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub policy: DenseNet,
    pub logvar: DenseNet,
    /// When set the variance head reports `lv = 0`.
    pub frozen_logvar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorDocument {
    pub format_version: u32,
    pub frozen_logvar: bool,
    pub policy: NetDocument,
    pub logvar: NetDocument,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Result<Self> {
        let mut dims = vec![STATE_DIM];
        dims.extend(&config.actor_hidden);
        dims.push(1);
        let mut acts = vec![Activation::Relu; config.actor_hidden.len()];
        acts.push(Activation::Sigmoid);
        let policy = DenseNet::new(&dims, &acts, &vec![0.0; config.actor_hidden.len()], rng)?;

        let mut dims = vec![STATE_DIM];
        dims.extend(&config.logvar_hidden);
        dims.push(1);
        let mut acts = vec![Activation::Relu; config.logvar_hidden.len()];
        acts.push(Activation::Identity);
        let logvar = DenseNet::new(&dims, &acts, &vec![0.0; config.logvar_hidden.len()], rng)?;
        Ok(Actor {
            policy,
            logvar,
            frozen_logvar: config.freeze_logvar,
        })
    }

    pub fn action(&self, features: &[f64]) -> f64 {
        self.policy.forward(features, None).map(|v| v[0]).unwrap_or(0.0)
    }

    /// Clipped log-variance.
    pub fn log_var(&self, features: &[f64]) -> f64 {
        if self.frozen_logvar {
            return 0.0;
        }
        let lv = self.logvar.forward(features, None).map(|v| v[0]).unwrap_or(0.0);
        lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
    }

    pub fn sigma2(&self, state: &HedgeState) -> f64 {
        self.log_var(&state.features()).exp()
    }

    /// Clipped log-variances for a batch of feature rows.
    pub fn log_var_batch(&self, states: ArrayView2<f64>) -> Result<Array1<f64>> {
        if self.frozen_logvar {
            return Ok(Array1::zeros(states.nrows()));
        }
        Ok(self
            .logvar
            .forward_batch(states, None)?
            .column(0)
            .mapv(|lv| lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX)))
    }

    pub fn to_document(&self) -> ActorDocument {
        ActorDocument {
            format_version: FORMAT_VERSION,
            frozen_logvar: self.frozen_logvar,
            policy: NetDocument::from(&self.policy),
            logvar: NetDocument::from(&self.logvar),
        }
    }

    pub fn from_document(doc: ActorDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(HedgeError::Format(format!(
                "unsupported actor format version {}",
                doc.format_version
            )));
        }
        let actor = Actor {
            policy: DenseNet::try_from(doc.policy)?,
            logvar: DenseNet::try_from(doc.logvar)?,
            frozen_logvar: doc.frozen_logvar,
        };
        if actor.policy.input_dim() != STATE_DIM || actor.policy.output_dim() != 1 {
            return Err(HedgeError::Format("actor policy must map the state to one output".into()));
        }
        if actor.logvar.input_dim() != STATE_DIM || actor.logvar.output_dim() != 1 {
            return Err(HedgeError::Format("actor variance head must map the state to one output".into()));
        }
        Ok(actor)
    }
}

impl HedgePolicy for Actor {
    fn position(&self, state: &HedgeState) -> f64 {
        self.action(&state.features())
    }
}

pub fn new_critic<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Result<DenseNet> {
    let mut dims = vec![STATE_DIM + 1];
    dims.extend(&config.critic_hidden);
    dims.push(1);
    let mut acts = vec![Activation::Relu; config.critic_hidden.len()];
    acts.push(Activation::Identity);
    DenseNet::new(&dims, &acts, &vec![config.dropout; config.critic_hidden.len()], rng)
}

/// Deterministic or exploratory action, plus `sigma^2` of the variance head.
pub fn select_action<R: Rng + ?Sized>(
    actor: &Actor,
    state: &HedgeState,
    explore: bool,
    noise_std: f64,
    rng: &mut R,
) -> (f64, f64) {
    let x = state.features();
    let mut a = actor.action(&x);
    if explore {
        a = (a + noise_std * standard_normal(rng)).clamp(0.0, 1.0);
    }
    (a, actor.log_var(&x).exp())
}

fn critic_input(states: ArrayView2<f64>, actions: &Array1<f64>) -> Array2<f64> {
    let a = actions.view().insert_axis(Axis(1));
    concatenate(Axis(1), &[states, a]).expect("matching rows")
}

/// `y = r + gamma Q'(s', pi'(s'))`, or `y = r` on terminal transitions.
/// Target networks run without dropout.
pub fn critic_target(batch: &Batch, target_actor: &Actor, target_critic: &DenseNet, gamma: f64) -> Result<Array1<f64>> {
    let next_a = target_actor.policy.forward_batch(batch.next_states.view(), None)?.column(0).to_owned();
    let q = target_critic.forward_batch(critic_input(batch.next_states.view(), &next_a).view(), None)?;
    Ok(Array1::from_shape_fn(batch.len(), |i| {
        if batch.dones[i] {
            batch.rewards[i]
        } else {
            batch.rewards[i] + gamma * q[[i, 0]]
        }
    }))
}

/// Mean critic loss over a batch and its per-sample gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub loss: f64,
    /// d loss / d Q for each sample (already divided by the batch size).
    pub d_q: Array1<f64>,
    /// d loss / d lv for each sample with the residual held fixed; `None`
    /// for the plain loss.
    pub d_log_var: Option<Array1<f64>>,
}

/// Plain loss `mean 0.5 (y - Q)^2`.
pub fn mse_td_loss(q: &Array1<f64>, y: &Array1<f64>) -> CriticLoss {
    let n = q.len() as f64;
    let mut loss = 0.0;
    let d_q = Array1::from_shape_fn(q.len(), |i| {
        let e = q[i] - y[i];
        loss += 0.5 * e * e;
        e / n
    });
    CriticLoss {
        loss: loss / n,
        d_q,
        d_log_var: None,
    }
}

/// Precision-weighted loss `mean 0.5 e^{-lv} (y - Q)^2 + 0.5 lv`.
pub fn gaussian_td_loss(q: &Array1<f64>, y: &Array1<f64>, log_var: &Array1<f64>) -> CriticLoss {
    let n = q.len() as f64;
    let mut loss = 0.0;
    let mut d_lv = Array1::zeros(q.len());
    let d_q = Array1::from_shape_fn(q.len(), |i| {
        let g = gaussian_nll(q[i] - y[i], log_var[i]);
        loss += g.loss;
        d_lv[i] = g.d_log_var / n;
        g.d_residual / n
    });
    CriticLoss {
        loss: loss / n,
        d_q,
        d_log_var: Some(d_lv),
    }
}

/// Unbiased sample variance (divisor `n - 1`).
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(HedgeError::Argument("sample variance needs at least two values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Variance of `Q(state, action)` over `passes` independent dropout masks.
pub fn epistemic_q_variance(critic: &DenseNet, state: &HedgeState, action: f64, passes: usize, seed: u64) -> Result<f64> {
    if passes < 2 {
        return Err(HedgeError::Argument(format!("need at least 2 passes, got {passes}")));
    }
    if !critic.has_dropout() {
        return Ok(0.0);
    }
    let mut row = state.features().to_vec();
    row.push(action);
    let input = Array2::from_shape_fn((passes, row.len()), |(_, j)| row[j]);
    let mask = DropoutMask::from_seed(critic, passes, seed);
    let q = critic.forward_batch(input.view(), Some(&mask))?;
    sample_variance(q.column(0).as_slice().expect("contiguous column"))
}

/// Losses of one update, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

/// Online and target networks with their optimisers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: TrainConfig,
    pub actor: Actor,
    pub critic: DenseNet,
    pub target_actor: Actor,
    pub target_critic: DenseNet,
    actor_opt: AdamState,
    logvar_opt: AdamState,
    critic_opt: AdamState,
    rng: ChaCha8Rng,
    pub updates: u64,
}

impl Agent {
    pub fn new(config: TrainConfig, seed_value: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(HedgeError::Config(errs));
        }
        let mut rng = seed::rng(seed::derive(seed_value, seed::purpose::AGENT, 0));
        let actor = Actor::new(&config, &mut rng)?;
        let critic = new_critic(&config, &mut rng)?;
        Ok(Agent {
            actor_opt: AdamState::new(&actor.policy, AdamConfig::with_lr(config.actor_lr)),
            logvar_opt: AdamState::new(&actor.logvar, AdamConfig::with_lr(config.logvar_lr)),
            critic_opt: AdamState::new(&critic, AdamConfig::with_lr(config.critic_lr)),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            config,
            rng,
            updates: 0,
        })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Exploratory action drawn with the agent's own stream.
    pub fn explore(&mut self, state: &HedgeState, noise_std: f64) -> (f64, f64) {
        select_action(&self.actor, state, true, noise_std, &mut self.rng)
    }

    /// One critic step, one actor step and the soft target updates.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(HedgeError::Argument("empty batch".into()));
        }
        let y = critic_target(batch, &self.target_actor, &self.target_critic, self.config.discount)?;
        let critic_loss = self.critic_update(batch, &y)?;
        let actor_objective = self.actor_update(batch)?;
        soft_update(&mut self.target_actor.policy, &self.actor.policy, self.config.soft_update_rate)?;
        soft_update(&mut self.target_actor.logvar, &self.actor.logvar, self.config.soft_update_rate)?;
        soft_update(&mut self.target_critic, &self.critic, self.config.soft_update_rate)?;
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_objective,
        })
    }

    fn critic_update(&mut self, batch: &Batch, y: &Array1<f64>) -> Result<f64> {
        let input = critic_input(batch.states.view(), &batch.actions);
        let mask = self
            .critic
            .has_dropout()
            .then(|| DropoutMask::sample(&self.critic, batch.len(), &mut self.rng));
        let trace = self.critic.forward_trace(input.view(), mask.as_ref())?;
        let q = trace.output().column(0).to_owned();
        let loss = match self.config.variant {
            Variant::Ddpg => mse_td_loss(&q, y),
            Variant::DdpgUncertainty => {
                let lv = self.actor.log_var_batch(batch.states.view())?;
                gaussian_td_loss(&q, y, &lv)
            }
        };
        let (grads, _) = self.critic.backward(&trace, loss.d_q.view().insert_axis(Axis(1)))?;
        self.critic_opt.step(&mut self.critic, &grads)?;

        if let (Some(d_lv), false) = (&loss.d_log_var, self.actor.frozen_logvar) {
            let lv_trace = self.actor.logvar.forward_trace(batch.states.view(), None)?;
            let (g, _) = self.actor.logvar.backward(&lv_trace, d_lv.view().insert_axis(Axis(1)))?;
            self.logvar_opt.step(&mut self.actor.logvar, &g)?;
        }
        Ok(loss.loss)
    }

    /// Ascend `mean Q(s, pi(s)) - beta sqrt(Var Q)`; returns the objective.
    fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let trace = self.actor.policy.forward_trace(batch.states.view(), None)?;
        let actions = trace.output().column(0).to_owned();
        let input = critic_input(batch.states.view(), &actions);
        let n = batch.len() as f64;
        let beta = self.config.epistemic_penalty;

        let (objective, d_action) = if beta > 0.0 && self.critic.has_dropout() {
            self.penalised_q_gradient(input.view(), beta)?
        } else {
            let ct = self.critic.forward_trace(input.view(), None)?;
            let upstream = Array2::from_elem((batch.len(), 1), -1.0 / n);
            let (_, d_in) = self.critic.backward(&ct, upstream.view())?;
            (ct.output().mean().unwrap_or(0.0), d_in.column(STATE_DIM).to_owned())
        };
        apply_actor_gradient(&mut self.actor.policy, &mut self.actor_opt, &trace, &d_action)?;
        Ok(objective)
    }

    /// Objective `mean_b [mean_t Q_t - beta std_t Q_t]` over MC-dropout passes
    /// and d(-objective)/d action.
    fn penalised_q_gradient(&mut self, input: ArrayView2<f64>, beta: f64) -> Result<(f64, Array1<f64>)> {
        let b = input.nrows();
        let passes = self.config.mc_passes;
        let tf = passes as f64;
        let mut traces = Vec::with_capacity(passes);
        let mut qs = Array2::zeros((passes, b));
        for t in 0..passes {
            let mask = DropoutMask::sample(&self.critic, b, &mut self.rng);
            let tr = self.critic.forward_trace(input, Some(&mask))?;
            qs.row_mut(t).assign(&tr.output().column(0));
            traces.push(tr);
        }
        let mean = qs.mean_axis(Axis(0)).expect("passes > 0");
        let var = Array1::from_shape_fn(b, |i| {
            qs.column(i).iter().map(|q| (q - mean[i]).powi(2)).sum::<f64>() / (tf - 1.0)
        });
        let std = var.mapv(f64::sqrt);
        let objective = (&mean - &(beta * &std)).mean().unwrap_or(0.0);
        let mut d_action = Array1::zeros(b);
        for (t, tr) in traces.iter().enumerate() {
            let upstream = Array2::from_shape_fn((b, 1), |(i, _)| {
                let spread = if std[i] > 0.0 {
                    beta * (qs[[t, i]] - mean[i]) / ((tf - 1.0) * std[i])
                } else {
                    0.0
                };
                -(1.0 / tf - spread) / b as f64
            });
            let (_, d_in) = self.critic.backward(tr, upstream.view())?;
            d_action += &d_in.column(STATE_DIM);
        }
        Ok((objective, d_action))
    }
}

/// Backpropagate `d_action` (d loss / d action per sample) through the
/// policy and take an Adam step.
pub fn apply_actor_gradient(
    policy: &mut DenseNet,
    opt: &mut AdamState,
    trace: &crate::nn::Trace,
    d_action: &Array1<f64>,
) -> Result<()> {
    let (grads, _) = policy.backward(trace, d_action.view().insert_axis(Axis(1)))?;
    opt.step(policy, &grads)
}
