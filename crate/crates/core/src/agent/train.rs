use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Actor, ActorDocument, Agent, ReplayBuffer, Stored, TrainConfig};
use crate::env::{build_state, risk_adjusted_reward, step, AccountState, CostModel, Transition};
use crate::error::{HedgeError, Result};
use crate::market::{EpisodeParams, HedgeEpisode};
use crate::nn::DenseNet;
use crate::seed;

/// Supplies the `index`-th training episode.
pub trait EpisodeSource {
    fn episode(&self, index: usize) -> Result<HedgeEpisode>;
}

/// Fresh simulated episodes with seeds derived from a master seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedEpisodes {
    pub params: EpisodeParams,
    pub master_seed: u64,
}

impl EpisodeSource for SimulatedEpisodes {
    fn episode(&self, index: usize) -> Result<HedgeEpisode> {
        self.params
            .generate(seed::derive(self.master_seed, seed::purpose::TRAIN_EPISODES, index as u64))
    }
}

/// A fixed set of episodes, cycled in order.
impl EpisodeSource for [HedgeEpisode] {
    fn episode(&self, index: usize) -> Result<HedgeEpisode> {
        if self.is_empty() {
            return Err(HedgeError::Argument("no training episodes".into()));
        }
        Ok(self[index % self.len()].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub episode: usize,
    /// Episode P&L (premium-normalised when the config normalises rewards).
    pub total_reward: f64,
    /// Mean critic loss over the episode's updates (0 before warm-up ends).
    pub critic_loss: f64,
    /// Mean variance-head output over visited states.
    pub mean_sigma2: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub log: Vec<TrainLogRow>,
}

/// Learning signal for one raw step reward.
pub fn shaped_reward(config: &TrainConfig, reward: f64, premium: f64) -> f64 {
    let r = if config.normalize_rewards { reward / premium } else { reward };
    risk_adjusted_reward(r * config.reward_scale, config.risk_aversion)
}

/// Run the DDPG loop. The result is a pure function of the source, the
/// config and `seed`.
pub fn train(source: &dyn EpisodeSource, config: &TrainConfig, seed_value: u64) -> Result<TrainOutcome> {
    let mut agent = Agent::new(config.clone(), seed_value)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let cost = CostModel::new(config.cost_rate)?;
    let mut log = Vec::with_capacity(config.episodes);
    let mut env_steps = 0usize;

    for index in 0..config.episodes {
        let episode = source.episode(index)?;
        let noise = config.noise_at(index);
        let mut account = AccountState::open(&episode);
        let mut state = build_state(&episode, 0, account.position)?;
        let (mut total, mut loss_sum, mut loss_n, mut sigma_sum) = (0.0, 0.0, 0usize, 0.0);

        for t in 0..episode.steps() {
            let (action, sigma2) = agent.explore(&state, noise);
            sigma_sum += sigma2;
            let out = step(&episode, &account, t, action, &cost)?;
            let next_state = build_state(&episode, t + 1, out.account.position)?;
            let transition = Transition {
                state,
                action,
                reward: out.reward,
                next_state,
                done: out.done,
            };
            buffer.push(Stored::from_transition(
                &transition,
                shaped_reward(config, out.reward, episode.premium),
            ));
            total += out.reward;
            account = out.account;
            state = next_state;
            env_steps += 1;

            if buffer.len() >= config.warmup.max(config.batch_size) && env_steps % config.update_every == 0 {
                let batch = buffer.sample(config.batch_size, agent.rng())?;
                loss_sum += agent.update(&batch)?.critic_loss;
                loss_n += 1;
            }
        }
        let steps = episode.steps().max(1) as f64;
        log.push(TrainLogRow {
            episode: index,
            total_reward: if config.normalize_rewards { total / episode.premium } else { total },
            critic_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 },
            mean_sigma2: sigma_sum / steps,
        });
    }
    Ok(TrainOutcome { agent, log })
}

/// Everything needed to reload a trained agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub config: TrainConfig,
    pub actor: Actor,
    pub critic: DenseNet,
    pub target_actor: Actor,
    pub target_critic: DenseNet,
    pub log: Vec<TrainLogRow>,
}

impl From<&TrainOutcome> for Bundle {
    fn from(out: &TrainOutcome) -> Self {
        Bundle {
            config: out.agent.config.clone(),
            actor: out.agent.actor.clone(),
            critic: out.agent.critic.clone(),
            target_actor: out.agent.target_actor.clone(),
            target_critic: out.agent.target_critic.clone(),
            log: out.log.clone(),
        }
    }
}

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HedgeError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HedgeError::io(path, e))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialisable") + "\n"
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| HedgeError::Format(format!("{}: {e}", path.display())))
}

pub fn write_train_log<W: std::io::Write>(log: &[TrainLogRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in log {
        w.serialize(row).map_err(crate::data::csv_err)?;
    }
    w.flush().map_err(|e| HedgeError::Format(e.to_string()))
}

/// Write the bundle files into `dir`, creating it if needed.
pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HedgeError::io(dir, e))?;
    write(&dir.join("actor.json"), json(&bundle.actor.to_document()))?;
    write(&dir.join("target_actor.json"), json(&bundle.target_actor.to_document()))?;
    write(&dir.join("critic.json"), bundle.critic.to_json() + "\n")?;
    write(&dir.join("target_critic.json"), bundle.target_critic.to_json() + "\n")?;
    write(&dir.join("train_config.json"), json(&bundle.config))?;
    let path = dir.join("train_log.csv");
    let file = std::fs::File::create(&path).map_err(|e| HedgeError::io(&path, e))?;
    write_train_log(&bundle.log, file)
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let actor = Actor::from_document(parse::<ActorDocument>(&dir.join("actor.json"))?)?;
    let target_actor = Actor::from_document(parse::<ActorDocument>(&dir.join("target_actor.json"))?)?;
    let critic = DenseNet::from_json(&read(&dir.join("critic.json"))?)?;
    let target_critic = DenseNet::from_json(&read(&dir.join("target_critic.json"))?)?;
    let config: TrainConfig = parse(&dir.join("train_config.json"))?;
    let log_path = dir.join("train_log.csv");
    let log = match std::fs::File::open(&log_path) {
        Ok(f) => csv::Reader::from_reader(f)
            .deserialize()
            .collect::<std::result::Result<Vec<TrainLogRow>, _>>()
            .map_err(|e| HedgeError::Format(format!("{}: {e}", log_path.display())))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(HedgeError::io(&log_path, e)),
    };
    Ok(Bundle {
        config,
        actor,
        critic,
        target_actor,
        target_critic,
        log,
    })
}

/// Load only the actor of a bundle directory.
pub fn load_actor(dir: &Path) -> Result<Actor> {
    Actor::from_document(parse::<ActorDocument>(&dir.join("actor.json"))?)
}
