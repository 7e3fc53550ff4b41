//! The `deephedge` command line.
//!
//! Every subcommand reads one JSON [`RunConfig`] (all fields optional),
//! applies the global `--seed` / `--out` overrides, validates everything up
//! front and only then writes its outputs plus a `run.json` with the
//! resolved config and crate version. Outputs carry no timestamps, so a
//! rerun with the same inputs is byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::agent::{self, Bundle, SimulatedEpisodes, TrainConfig, Variant};
use crate::analytics::DAYS_PER_YEAR;
use crate::data::{self, EnvOptions, TRADING_DAYS_PER_YEAR};
use crate::env::{CostModel, DeltaHedge, HedgePolicy, NoHedge};
use crate::error::{HedgeError, Result};
use crate::eval::{self, PnlReport};
use crate::market::{EpisodeParams, GbmParams, HedgeEpisode};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub moneyness_lo: f64,
    pub moneyness_hi: f64,
    pub moneyness_step: f64,
    pub tau_days_lo: f64,
    pub tau_days_hi: f64,
    pub tau_days_step: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            moneyness_lo: 0.8,
            moneyness_hi: 1.2,
            moneyness_step: 0.01,
            tau_days_lo: 1.0,
            tau_days_hi: 30.0,
            tau_days_step: 1.0,
        }
    }
}

impl GridConfig {
    pub fn moneyness(&self) -> Vec<f64> {
        eval::grid(self.moneyness_lo, self.moneyness_hi, self.moneyness_step)
    }

    pub fn tau_days(&self) -> Vec<f64> {
        eval::grid(self.tau_days_lo, self.tau_days_hi, self.tau_days_step)
    }

    fn validate(&self, errs: &mut Vec<String>) {
        for (name, lo, hi, step) in [
            ("moneyness", self.moneyness_lo, self.moneyness_hi, self.moneyness_step),
            ("tau_days", self.tau_days_lo, self.tau_days_hi, self.tau_days_step),
        ] {
            if !(lo > 0.0 && hi >= lo && step > 0.0) {
                errs.push(format!("heatmap {name} grid needs 0 < lo <= hi and step > 0"));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub market: GbmParams,
    pub maturity_days: u32,
    pub steps_per_day: u32,
    /// Proportional fee; also used for training.
    pub cost_rate: f64,
    /// Mean-variance weight of the training reward.
    pub risk_aversion: f64,
    pub train: TrainConfig,
    pub simulate_episodes: usize,
    pub eval_episodes: usize,
    /// Report P&L as a fraction of the premium.
    pub normalize: bool,
    pub heatmap: GridConfig,
    pub mc_passes: usize,
    pub calibration_samples: usize,
    pub calibration_bins: usize,
    pub ingest: EnvOptions,
    /// Not recorded in outputs, so runs written to different places compare equal.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 1,
            market: GbmParams::default(),
            maturity_days: 30,
            steps_per_day: 1,
            cost_rate: 0.01,
            risk_aversion: 0.0,
            train: TrainConfig::default(),
            simulate_episodes: 10,
            eval_episodes: 5000,
            normalize: true,
            heatmap: GridConfig::default(),
            mc_passes: 30,
            calibration_samples: 10_000,
            calibration_bins: 7,
            ingest: EnvOptions::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HedgeError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HedgeError::Config(vec![format!("{}: {e}", path.display())]))
    }

    pub fn episode_params(&self) -> EpisodeParams {
        EpisodeParams {
            market: self.market,
            maturity_days: self.maturity_days,
            steps_per_day: self.steps_per_day,
        }
    }

    pub fn cost(&self) -> CostModel {
        CostModel { rate: self.cost_rate }
    }

    /// Training settings with the run-level fee and risk weight applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            cost_rate: self.cost_rate,
            risk_aversion: self.risk_aversion,
            ..self.train.clone()
        }
    }

    /// Every problem with the config.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(e) = self.market.validate() {
            errs.push(e.to_string());
        }
        if !(1..=365).contains(&self.maturity_days) {
            errs.push(format!("maturity_days {} outside [1, 365]", self.maturity_days));
        }
        if self.steps_per_day == 0 {
            errs.push("steps_per_day must be >= 1".into());
        }
        if !(self.cost_rate >= 0.0 && self.cost_rate.is_finite()) {
            errs.push(format!("cost_rate {} must be >= 0", self.cost_rate));
        }
        if !(self.risk_aversion >= 0.0 && self.risk_aversion.is_finite()) {
            errs.push(format!("risk_aversion {} must be >= 0", self.risk_aversion));
        }
        errs.extend(self.train_config().validate().into_iter().map(|e| format!("train: {e}")));
        if self.eval_episodes < 2 {
            errs.push("eval_episodes must be >= 2".into());
        }
        if self.mc_passes < 2 {
            errs.push("mc_passes must be >= 2".into());
        }
        if self.calibration_bins < 2 {
            errs.push("calibration_bins must be >= 2".into());
        }
        self.heatmap.validate(&mut errs);
        errs
    }
}

#[derive(Debug, Parser)]
#[command(name = "deephedge", version, about = "Deep hedging of a short call with an uncertainty-aware DDPG agent")]
pub struct Cli {
    /// JSON run configuration (defaults apply to missing fields)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated episodes as CSV
    Simulate(SimulateArgs),
    /// Train an agent and write a checkpoint bundle
    Train(TrainArgs),
    /// Compare checkpoints against the delta baseline
    Evaluate(EvaluateArgs),
    /// Parse an option chain into features and hedging episodes
    Ingest(IngestArgs),
    /// Uncertainty and realized-variance grids
    Heatmap(CheckpointArgs),
    /// Bin predicted variance against realized reward variance
    Calibrate(CheckpointArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of episodes (default from config)
    #[arg(long)]
    pub episodes: Option<usize>,
    /// One `episodes.csv` with an `episode_id` column instead of one file each
    #[arg(long)]
    pub single_file: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "ddpg-uncertainty")]
    pub variant: String,
    /// Training episodes (default from config)
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint bundle directory (repeatable)
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Also evaluate the never-hedge seller
    #[arg(long)]
    pub no_hedge: bool,
    /// Statistics over single step rewards instead of episode totals
    #[arg(long)]
    pub per_step: bool,
    /// Write trajectories.csv for every strategy
    #[arg(long)]
    pub dump_trajectories: bool,
    /// Evaluate on an `episodes.json` written by `ingest`
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Evaluation episodes (default from config)
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Option chain CSV
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.master_seed = s;
    }
    if let Some(o) = &cli.out {
        config.output_dir = o.clone();
    }
    match cli.command {
        Command::Simulate(a) => cmd_simulate(config, &a),
        Command::Train(a) => cmd_train(config, &a),
        Command::Evaluate(a) => cmd_evaluate(config, &a),
        Command::Ingest(a) => cmd_ingest(config, &a),
        Command::Heatmap(a) => cmd_heatmap(config, &a),
        Command::Calibrate(a) => cmd_calibrate(config, &a),
    }
}

fn check(config: &RunConfig, mut extra: Vec<String>) -> Result<()> {
    extra.extend(config.validate());
    if extra.is_empty() {
        Ok(())
    } else {
        Err(HedgeError::Config(extra))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| HedgeError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HedgeError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HedgeError::Format(e.to_string()))? + "\n";
    std::fs::write(path, text).map_err(|e| HedgeError::io(path, e))
}

#[derive(Serialize)]
struct RunRecord<'a, T: Serialize> {
    version: &'static str,
    command: &'a str,
    days_per_year: f64,
    trading_days_per_year: f64,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<T>,
}

fn write_run<T: Serialize>(config: &RunConfig, command: &str, details: Option<T>) -> Result<()> {
    write_json(
        &config.output_dir.join("run.json"),
        &RunRecord {
            version: crate::VERSION,
            command,
            days_per_year: DAYS_PER_YEAR,
            trading_days_per_year: TRADING_DAYS_PER_YEAR,
            config,
            details,
        },
    )
}

#[derive(Serialize)]
struct ManifestEntry {
    id: usize,
    seed: u64,
    file: String,
}

pub fn cmd_simulate(config: RunConfig, args: &SimulateArgs) -> Result<()> {
    check(&config, vec![])?;
    let n = args.episodes.unwrap_or(config.simulate_episodes);
    let params = config.episode_params();
    let eps = params.generate_batch(config.master_seed, seed::purpose::SIMULATE, n)?;
    let out = &config.output_dir;
    ensure_dir(out)?;

    let mut manifest = Vec::with_capacity(n);
    if args.single_file && n > 0 {
        let path = out.join("episodes.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["episode_id", "step", "time_years", "stock", "option"])
            .map_err(data::csv_err)?;
        for (id, ep) in eps.iter().enumerate() {
            for i in 0..ep.len() {
                w.write_record([
                    id.to_string(),
                    i.to_string(),
                    ep.path.times[i].to_string(),
                    ep.stock(i).to_string(),
                    ep.option(i).to_string(),
                ])
                .map_err(data::csv_err)?;
            }
            manifest.push(ManifestEntry {
                id,
                seed: ep.path.seed,
                file: "episodes.csv".into(),
            });
        }
        w.flush().map_err(|e| HedgeError::io(&path, e))?;
    } else if n > 0 {
        let dir = out.join("episodes");
        ensure_dir(&dir)?;
        for (id, ep) in eps.iter().enumerate() {
            let name = format!("episode_{id:05}.csv");
            let path = dir.join(&name);
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["step", "time_years", "stock", "option"]).map_err(data::csv_err)?;
            for i in 0..ep.len() {
                w.write_record([
                    i.to_string(),
                    ep.path.times[i].to_string(),
                    ep.stock(i).to_string(),
                    ep.option(i).to_string(),
                ])
                .map_err(data::csv_err)?;
            }
            w.flush().map_err(|e| HedgeError::io(&path, e))?;
            manifest.push(ManifestEntry {
                id,
                seed: ep.path.seed,
                file: format!("episodes/{name}"),
            });
        }
    }
    write_json(&out.join("manifest.json"), &manifest)?;
    write_run(&config, "simulate", None::<()>)
}

pub fn cmd_train(config: RunConfig, args: &TrainArgs) -> Result<()> {
    let mut errs = vec![];
    let variant = match Variant::parse(&args.variant) {
        Ok(v) => Some(v),
        Err(e) => {
            errs.push(e.to_string());
            None
        }
    };
    let mut config = config;
    if let Some(v) = variant {
        config.train = config.train.clone().for_variant(v);
    }
    if let Some(n) = args.episodes {
        config.train.episodes = n;
    }
    check(&config, errs)?;
    let source = SimulatedEpisodes {
        params: config.episode_params(),
        master_seed: config.master_seed,
    };
    let outcome = agent::train(&source, &config.train_config(), config.master_seed)?;
    agent::save_bundle(&config.output_dir, &Bundle::from(&outcome))?;
    write_run(&config, "train", None::<()>)
}

fn evaluation_episodes(config: &RunConfig, data_path: Option<&Path>, count: Option<usize>) -> Result<Vec<HedgeEpisode>> {
    match data_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HedgeError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| HedgeError::Format(format!("{}: {e}", p.display())))
        }
        None => config.episode_params().generate_batch(
            config.master_seed,
            seed::purpose::EVAL_EPISODES,
            count.unwrap_or(config.eval_episodes),
        ),
    }
}

#[derive(Serialize)]
struct NamedReport<'a> {
    name: &'a str,
    report: &'a PnlReport,
}

pub fn cmd_evaluate(config: RunConfig, args: &EvaluateArgs) -> Result<()> {
    let mut errs = vec![];
    if args.episodes == Some(1) || args.episodes == Some(0) {
        errs.push("evaluation needs at least 2 episodes".into());
    }
    check(&config, errs)?;
    let mut agents = Vec::new();
    for dir in &args.checkpoint {
        let bundle = agent::load_bundle(dir)?;
        let mut name = bundle.config.variant.name().to_string();
        if agents.iter().any(|(n, _): &(String, _)| *n == name) {
            name = format!("{name}:{}", dir.display());
        }
        agents.push((name, bundle.actor));
    }
    let episodes = evaluation_episodes(&config, args.data.as_deref(), args.episodes)?;
    let cost = config.cost();

    let delta = DeltaHedge;
    let mut strategies: Vec<(&str, &dyn HedgePolicy)> = vec![("delta", &delta)];
    if args.no_hedge {
        strategies.push(("no-hedge", &NoHedge));
    }
    for (name, actor) in &agents {
        strategies.push((name.as_str(), actor));
    }
    let table = eval::compare_strategies(&strategies, &episodes, &cost, config.normalize, args.per_step)?;

    let mut reports = Vec::new();
    for (name, policy) in &strategies {
        let report = if args.per_step {
            eval::per_step_report(*policy, &episodes, &cost, config.normalize)?
        } else {
            eval::evaluate_policy(*policy, &episodes, &cost, config.normalize)?
        };
        reports.push((name.to_string(), report));
    }

    let out = &config.output_dir;
    ensure_dir(out)?;
    let path = out.join("strategy_table.csv");
    table.write_csv(create(&path)?)?;

    let path = out.join("histogram.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["strategy", "lo", "hi", "count"]).map_err(data::csv_err)?;
    for (name, r) in &reports {
        for (i, c) in r.histogram.counts.iter().enumerate() {
            w.write_record([
                name.clone(),
                r.histogram.edges[i].to_string(),
                r.histogram.edges[i + 1].to_string(),
                c.to_string(),
            ])
            .map_err(data::csv_err)?;
        }
    }
    w.flush().map_err(|e| HedgeError::io(&path, e))?;

    let named: Vec<NamedReport> = reports.iter().map(|(n, r)| NamedReport { name: n, report: r }).collect();
    #[derive(Serialize)]
    struct PnlFile<'a> {
        version: &'static str,
        per_step: bool,
        cost_rate: f64,
        config: &'a RunConfig,
        strategies: Vec<NamedReport<'a>>,
    }
    write_json(
        &out.join("pnl_report.json"),
        &PnlFile {
            version: crate::VERSION,
            per_step: args.per_step,
            cost_rate: config.cost_rate,
            config: &config,
            strategies: named,
        },
    )?;

    if args.dump_trajectories {
        let path = out.join("trajectories.csv");
        let mut file = create(&path)?;
        for (k, (name, policy)) in strategies.iter().enumerate() {
            let mut buf = Vec::new();
            eval::write_trajectories(*policy, &episodes, &cost, &mut buf)?;
            let text = String::from_utf8(buf).expect("utf-8 csv");
            let mut lines = text.lines();
            let header = lines.next().unwrap_or_default();
            if k == 0 {
                writeln!(file, "strategy,{header}").map_err(|e| HedgeError::io(&path, e))?;
            }
            for line in lines {
                writeln!(file, "{name},{line}").map_err(|e| HedgeError::io(&path, e))?;
            }
        }
        file.flush().map_err(|e| HedgeError::io(&path, e))?;
    }
    write_run(&config, "evaluate", Some(&table))
}

pub fn cmd_ingest(config: RunConfig, args: &IngestArgs) -> Result<()> {
    check(&config, vec![])?;
    let load = data::load_chain_csv(&args.input)?;
    let out = &config.output_dir;
    let ingested = data::ingest(load, &config.ingest);
    let residuals = data::residual_dataset(&ingested.contracts)?;
    ensure_dir(out)?;
    data::write_features_csv(&ingested.contracts, create(&out.join("features.csv"))?)?;
    data::write_rejects_csv(&ingested.load.rejects, create(&out.join("rejects.csv"))?)?;
    write_json(&out.join("episodes.json"), &ingested.episodes)?;

    let path = out.join("residual_correlation.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec![String::new()];
    header.extend(residuals.columns.iter().cloned());
    w.write_record(&header).map_err(data::csv_err)?;
    for (name, row) in residuals.columns.iter().zip(&residuals.correlation) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(data::csv_err)?;
    }
    w.flush().map_err(|e| HedgeError::io(&path, e))?;

    #[derive(Serialize)]
    struct Summary {
        rows: usize,
        rejects: usize,
        contracts: usize,
        episodes: usize,
        residual_samples: usize,
    }
    write_run(
        &config,
        "ingest",
        Some(Summary {
            rows: ingested.load.rows.len(),
            rejects: ingested.load.rejects.len(),
            contracts: ingested.contracts.len(),
            episodes: ingested.episodes.len(),
            residual_samples: residuals.samples.len(),
        }),
    )
}

pub fn cmd_heatmap(config: RunConfig, args: &CheckpointArgs) -> Result<()> {
    check(&config, vec![])?;
    let bundle = agent::load_bundle(&args.checkpoint)?;
    let (m, tau) = (config.heatmap.moneyness(), config.heatmap.tau_days());
    let vol = config.market.vol;
    let model = eval::uncertainty_heatmap(&bundle.actor, &m, &tau, vol)?;
    let epistemic = eval::epistemic_heatmap(&bundle.actor, &bundle.critic, &m, &tau, vol, config.mc_passes, config.master_seed)?;
    let episodes = evaluation_episodes(&config, None, None)?;
    let realized = eval::realized_variance_heatmap(&episodes, &bundle.actor, &config.cost(), &m, &tau, config.normalize)?;
    let realized_delta = eval::realized_variance_heatmap(&episodes, &DeltaHedge, &config.cost(), &m, &tau, config.normalize)?;
    let out = &config.output_dir;
    ensure_dir(out)?;
    model.write_csv(create(&out.join("heatmap_model.csv"))?)?;
    epistemic.write_csv(create(&out.join("heatmap_epistemic.csv"))?)?;
    realized.write_csv(create(&out.join("heatmap_realized.csv"))?)?;
    realized_delta.write_csv(create(&out.join("heatmap_realized_delta.csv"))?)?;
    write_run(&config, "heatmap", None::<()>)
}

pub fn cmd_calibrate(config: RunConfig, args: &CheckpointArgs) -> Result<()> {
    check(&config, vec![])?;
    let bundle = agent::load_bundle(&args.checkpoint)?;
    let params = config.episode_params();
    let steps = (params.maturity_days * params.steps_per_day) as usize;
    let n_eps = config.calibration_samples.div_ceil(steps);
    let episodes = params.generate_batch(config.master_seed, seed::purpose::CALIBRATION, n_eps)?;
    let mut samples = eval::calibration_samples(&bundle.actor, &bundle.actor, &episodes, &config.cost(), config.normalize)?;
    samples.truncate(config.calibration_samples);
    let report = eval::calibration_bins(&samples, config.calibration_bins)?;
    let out = &config.output_dir;
    ensure_dir(out)?;
    report.write_csv(create(&out.join("calibration.csv"))?)?;
    write_run(&config, "calibrate", Some(&report))
}
