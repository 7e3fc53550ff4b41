//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line. Failures are reported but
//! only fail the process with DEEPHEDGE_ACCEPTANCE_STRICT=1, so a workspace
//! test run still reaches the targets after this one.
//!
//! The reinforcement-learning criteria train two full-size agents (about
//! ten minutes in an optimised build).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use chrono::NaiveDate;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use deephedge::agent::{
    epistemic_q_variance, gaussian_td_loss, sample_variance, train, Actor, Agent, Batch, SimulatedEpisodes, Stored,
    TrainConfig, Variant,
};
use deephedge::analytics::{bs_call_price, implied_vol, OptionSpec, DAYS_PER_YEAR};
use deephedge::data::{filter_universe, ingest, synthetic_chain, write_chain_csv, parse_chain, EnvOptions, OptionQuoteRow};
use deephedge::env::{rollout, CostModel, DeltaHedge, HedgePolicy, HedgeState, NoHedge};
use deephedge::eval::{
    calibration_bins, calibration_samples, compare_strategies, evaluate_policy, grid, realized_variance_heatmap,
    uncertainty_heatmap,
};
use deephedge::market::{simulate_gbm, EpisodeParams, GbmParams};
use deephedge::nn::{gaussian_nll, Activation, DenseNet, DropoutMask};
use deephedge::seed;

/// Outcome of one criterion: pass flag and a one-line summary.
type Verdict = (bool, String);

// Desk-scale reinforcement-learning settings shared by criteria 5, 9 and 10.
const TRAIN_EPISODES: usize = 8000;
const EVAL_EPISODES: usize = 5000;
const RISK_AVERSION: f64 = 10.0;
const EPISTEMIC_PENALTY: f64 = 0.0;
const TRAIN_SEED: u64 = 1;
const EVAL_SEED: u64 = 20_240_601;
const COST: f64 = 0.01;

fn desk_config(variant: Variant) -> TrainConfig {
    let base = TrainConfig {
        episodes: TRAIN_EPISODES,
        risk_aversion: RISK_AVERSION,
        cost_rate: COST,
        ..TrainConfig::default()
    };
    match variant {
        Variant::Ddpg => base.for_variant(Variant::Ddpg),
        Variant::DdpgUncertainty => TrainConfig {
            epistemic_penalty: EPISTEMIC_PENALTY,
            ..base.for_variant(Variant::DdpgUncertainty)
        },
    }
}

fn normalized_stats(policy: &dyn HedgePolicy, params: EpisodeParams, n: usize, cost: f64, purpose: u64) -> (f64, f64) {
    let eps = params.generate_batch(EVAL_SEED, purpose, n).unwrap();
    let r = evaluate_policy(policy, &eps, &CostModel::new(cost).unwrap(), true).unwrap();
    (r.mean, r.variance)
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn c1_analytic_pricing() -> Verdict {
    let spec = OptionSpec::call(100.0, 30.0 / DAYS_PER_YEAR).unwrap();
    let price = bs_call_price(100.0, &spec, 0.2).unwrap();
    let mut worst: f64 = 0.0;
    for vol in [0.1, 0.2, 0.5] {
        let p = bs_call_price(100.0, &spec, vol).unwrap();
        worst = worst.max((implied_vol(p, 100.0, &spec).unwrap() - vol).abs());
    }
    (
        (price - 2.28).abs() <= 0.01 && worst <= 1e-6,
        format!("price {price:.4} (2.28 +/- 0.01), worst implied-vol error {worst:.1e}"),
    )
}

fn c2_no_hedge() -> Verdict {
    let (mean, var) = normalized_stats(&NoHedge, EpisodeParams::default(), 20_000, 0.0, seed::purpose::EVAL_EPISODES);
    (
        within(mean, -0.07, -0.01) && within(var, 1.16, 1.96),
        format!("mean {:.2}% in [-7, -1], variance {var:.3} in [1.16, 1.96]", 100.0 * mean),
    )
}

fn daily_and_thrice(cost: f64) -> ((f64, f64), (f64, f64)) {
    let daily = EpisodeParams::default();
    let thrice = EpisodeParams {
        steps_per_day: 3,
        ..daily
    };
    (
        normalized_stats(&DeltaHedge, daily, 20_000, cost, seed::purpose::EVAL_EPISODES),
        normalized_stats(&DeltaHedge, thrice, 20_000, cost, seed::purpose::EVAL_EPISODES),
    )
}

fn c3_delta_without_cost() -> Verdict {
    let ((m1, v1), (m3, v3)) = daily_and_thrice(0.0);
    let pass = within(v1, 0.09, 0.21) && within(v3, 0.05, 0.13) && m1.abs() <= 0.05 && m3.abs() <= 0.05 && v3 < v1;
    (
        pass,
        format!(
            "daily mean {:.2}% var {:.2}% [9, 21]; 3x/day mean {:.2}% var {:.2}% [5, 13]",
            100.0 * m1,
            100.0 * v1,
            100.0 * m3,
            100.0 * v3
        ),
    )
}

fn c4_delta_with_cost() -> Verdict {
    let ((m1, v1), (m3, v3)) = daily_and_thrice(0.01);
    let pass = within(m1, -0.31, -0.15) && within(m3, -0.42, -0.26) && v3 < v1;
    (
        pass,
        format!(
            "daily mean {:.2}% [-31, -15]; 3x/day mean {:.2}% [-42, -26]; var {:.2}% -> {:.2}%",
            100.0 * m1,
            100.0 * m3,
            100.0 * v1,
            100.0 * v3
        ),
    )
}

struct Trained {
    ddpg: Actor,
    uncertainty: Actor,
    seconds: f64,
}

fn train_desk_agents() -> Trained {
    let t0 = Instant::now();
    let src = SimulatedEpisodes {
        params: EpisodeParams::default(),
        master_seed: TRAIN_SEED,
    };
    let ddpg = train(&src, &desk_config(Variant::Ddpg), TRAIN_SEED).unwrap().agent.actor;
    let uncertainty = train(&src, &desk_config(Variant::DdpgUncertainty), TRAIN_SEED)
        .unwrap()
        .agent
        .actor;
    Trained {
        ddpg,
        uncertainty,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn c5_rl_ordering(agents: &Trained) -> Verdict {
    let eps = EpisodeParams::default()
        .generate_batch(EVAL_SEED, seed::purpose::EVAL_EPISODES, EVAL_EPISODES)
        .unwrap();
    let table = compare_strategies(
        &[
            ("delta", &DeltaHedge),
            ("ddpg", &agents.ddpg),
            ("ddpg-uncertainty", &agents.uncertainty),
        ],
        &eps,
        &CostModel::new(COST).unwrap(),
        true,
        false,
    )
    .unwrap();
    let cost = |n: &str| -table.row(n).unwrap().mean;
    let std = |n: &str| table.row(n).unwrap().std;
    let names = ["delta", "ddpg", "ddpg-uncertainty"];
    let ordered = cost("ddpg-uncertainty") < cost("ddpg") && cost("ddpg") < cost("delta");
    let stds_close = names
        .iter()
        .all(|a| names.iter().all(|b| (std(a) - std(b)).abs() <= 0.25 * std(b)));
    let pass = ordered && stds_close && agents.seconds < 30.0 * 60.0;
    (
        pass,
        format!(
            "cost unc {:.1}% < ddpg {:.1}% < delta {:.1}%: {ordered}; std {:.1}/{:.1}/{:.1}% within 25%: {stds_close}; training {:.0}s",
            100.0 * cost("ddpg-uncertainty"),
            100.0 * cost("ddpg"),
            100.0 * cost("delta"),
            100.0 * std("ddpg-uncertainty"),
            100.0 * std("ddpg"),
            100.0 * std("delta"),
            agents.seconds
        ),
    )
}

fn small_config() -> TrainConfig {
    TrainConfig {
        episodes: 30,
        warmup: 64,
        batch_size: 32,
        actor_hidden: vec![16, 16],
        critic_hidden: vec![16, 16],
        logvar_hidden: vec![8],
        ..TrainConfig::default()
    }
}

fn c6_baseline_equivalence() -> Verdict {
    let plain_cfg = small_config().for_variant(Variant::Ddpg);
    let pinned_cfg = TrainConfig {
        variant: Variant::DdpgUncertainty,
        dropout: 0.0,
        freeze_logvar: true,
        epistemic_penalty: 0.0,
        ..plain_cfg.clone()
    };
    // step by step on identical batches
    let mut plain = Agent::new(plain_cfg.clone(), 77).unwrap();
    let mut pinned = Agent::new(pinned_cfg.clone(), 77).unwrap();
    let mut rng = seed::rng(78);
    let mut identical_steps = 0;
    for _ in 0..500 {
        let items: Vec<Stored> = (0..32)
            .map(|i| {
                let s = HedgeState::simulated(rng.random_range(1.0..30.0) / 365.0, rng.random_range(0.8..1.2), rng.random_range(0.0..1.0), 0.2).unwrap();
                let s2 = HedgeState::simulated(s.tau, s.moneyness * rng.random_range(0.98..1.02), rng.random_range(0.0..1.0), 0.2).unwrap();
                Stored {
                    state: s.features(),
                    action: rng.random_range(0.0..1.0),
                    reward: rng.random_range(-0.2..0.1),
                    next_state: s2.features(),
                    done: i % 7 == 0,
                }
            })
            .collect();
        let batch = Batch::from_stored(&items);
        plain.update(&batch).unwrap();
        pinned.update(&batch).unwrap();
        if plain.actor != pinned.actor
            || plain.critic != pinned.critic
            || plain.target_actor != pinned.target_actor
            || plain.target_critic != pinned.target_critic
        {
            break;
        }
        identical_steps += 1;
    }
    // and through the full training loop
    let src = SimulatedEpisodes {
        params: EpisodeParams::default(),
        master_seed: 79,
    };
    let a = train(&src, &plain_cfg, 79).unwrap();
    let b = train(&src, &pinned_cfg, 79).unwrap();
    let same_train = a.agent.actor == b.agent.actor && a.agent.critic == b.agent.critic && a.log == b.log;
    (
        identical_steps == 500 && same_train && a.agent.updates >= 500,
        format!(
            "{identical_steps}/500 update steps bit-identical; train loop with {} updates identical: {same_train}",
            a.agent.updates
        ),
    )
}

fn rel_err(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / s
    }
}

fn numeric_grad(net: &DenseNet, loss: impl Fn(&DenseNet) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let base = net.params_flat();
    let mut probe = net.clone();
    (0..base.len())
        .map(|k| {
            let mut p = base.clone();
            p[k] = base[k] + h;
            probe.set_params_flat(&p).unwrap();
            let up = loss(&probe);
            p[k] = base[k] - h;
            probe.set_params_flat(&p).unwrap();
            (up - loss(&probe)) / (2.0 * h)
        })
        .collect()
}

fn c7_gradient_suite() -> Verdict {
    let acts = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity];
    let mut worst = [0.0f64; 3];
    for seed_value in 0..20u64 {
        let mut rng = seed::rng(seed_value);
        // layers, every activation pair, with dropout masks
        for &hidden in &acts {
            for &out in &acts {
                let mut net = DenseNet::new(&[4, 6, 5, 2], &[hidden, hidden, out], &[0.3, 0.3], &mut rng).unwrap();
                let p: Vec<f64> = net.params_flat().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
                net.set_params_flat(&p).unwrap();
                let x = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.5..1.5));
                let w = Array2::from_shape_simple_fn((3, 2), || rng.random_range(-1.0..1.0));
                let mask = DropoutMask::sample(&net, 3, &mut rng);
                let trace = net.forward_trace(x.view(), Some(&mask)).unwrap();
                let (g, _) = net.backward(&trace, w.view()).unwrap();
                let fd = numeric_grad(&net, |m| (m.forward_batch(x.view(), Some(&mask)).unwrap() * &w).sum());
                for (a, b) in g.to_flat().iter().zip(fd) {
                    worst[0] = worst[0].max(rel_err(*a, b));
                }
            }
        }
        // Gaussian negative log-likelihood in the residual and log-variance
        for _ in 0..10 {
            let (r, lv) = (rng.random_range(-3.0..3.0), rng.random_range(-4.0..4.0));
            let g = gaussian_nll(r, lv);
            let h = 1e-6;
            let fd_r = (gaussian_nll(r + h, lv).loss - gaussian_nll(r - h, lv).loss) / (2.0 * h);
            let fd_lv = (gaussian_nll(r, lv + h).loss - gaussian_nll(r, lv - h).loss) / (2.0 * h);
            worst[1] = worst[1].max(rel_err(g.d_residual, fd_r)).max(rel_err(g.d_log_var, fd_lv));
        }
        // combined critic loss: Q output and the log-variance head's parameters
        let n = 6;
        let q = Array1::from_shape_simple_fn(n, || rng.random_range(-2.0..2.0));
        let y = Array1::from_shape_simple_fn(n, || rng.random_range(-2.0..2.0));
        let states = Array2::from_shape_simple_fn((n, 9), || rng.random_range(-1.0..1.0));
        let head = DenseNet::new(&[9, 8, 1], &[Activation::Relu, Activation::Identity], &[0.0], &mut rng).unwrap();
        let trace = head.forward_trace(states.view(), None).unwrap();
        let lv = trace.output().column(0).to_owned();
        let loss = gaussian_td_loss(&q, &y, &lv);
        for i in 0..n {
            let h = 1e-5;
            let mut up = q.clone();
            up[i] += h;
            let mut down = q.clone();
            down[i] -= h;
            let fd = (gaussian_td_loss(&up, &y, &lv).loss - gaussian_td_loss(&down, &y, &lv).loss) / (2.0 * h);
            worst[2] = worst[2].max(rel_err(loss.d_q[i], fd));
        }
        let d_lv = loss.d_log_var.unwrap();
        let (g, _) = head.backward(&trace, d_lv.view().insert_axis(Axis(1))).unwrap();
        let fd = numeric_grad(&head, |m| {
            let lv = m.forward_batch(states.view(), None).unwrap().column(0).to_owned();
            gaussian_td_loss(&q, &y, &lv).loss
        });
        for (a, b) in g.to_flat().iter().zip(fd) {
            worst[2] = worst[2].max(rel_err(*a, b));
        }
    }
    (
        worst.iter().all(|&w| w <= 1e-4),
        format!(
            "worst relative error over 20 seeds: layers {:.1e}, likelihood {:.1e}, combined loss {:.1e} (limit 1e-4)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn c8_mc_dropout() -> Verdict {
    let state = HedgeState::simulated(12.0 / 365.0, 1.01, 0.5, 0.2).unwrap();
    let mut rng = seed::rng(5);
    let plain = DenseNet::new(&[10, 64, 64, 1], &[Activation::Relu, Activation::Relu, Activation::Identity], &[0.0, 0.0], &mut rng).unwrap();
    let zero = epistemic_q_variance(&plain, &state, 0.5, 30, 1).unwrap();
    let hand = sample_variance(&[1.0, 3.0]).unwrap();
    let net = DenseNet::new(&[10, 64, 64, 1], &[Activation::Relu, Activation::Relu, Activation::Identity], &[0.1, 0.1], &mut rng).unwrap();
    let est: Vec<f64> = (0..20)
        .map(|k| epistemic_q_variance(&net, &state, 0.5, 1000, k).unwrap())
        .collect();
    let mean = est.iter().sum::<f64>() / 20.0;
    let spread = sample_variance(&est).unwrap().sqrt();
    (
        zero == 0.0 && hand == 2.0 && mean > 0.0 && spread < 0.2 * mean,
        format!(
            "p=0 variance {zero}; {{1,3}} variance {hand}; T=1000 cross-seed std/mean {:.3} (< 0.2)",
            spread / mean
        ),
    )
}

fn c9_calibration(agents: &Trained) -> Verdict {
    let params = EpisodeParams::default();
    let eps = params
        .generate_batch(EVAL_SEED, seed::purpose::CALIBRATION, 10_000usize.div_ceil(30))
        .unwrap();
    let actor = &agents.uncertainty;
    let mut samples = calibration_samples(actor, actor, &eps, &CostModel::new(COST).unwrap(), true).unwrap();
    samples.truncate(10_000);
    let report = calibration_bins(&samples, 7).unwrap();
    let rho = report.spearman;

    // control: rewards drawn with exactly the predicted variance
    let mut rng = seed::rng(9);
    let control: Vec<(f64, f64)> = (0..10_000)
        .map(|i| {
            let s2 = 0.01 * (1.0 + (i % 50) as f64);
            (s2, s2.sqrt() * deephedge::market::standard_normal(&mut rng))
        })
        .collect();
    let control_rho = calibration_bins(&control, 7).unwrap().spearman;
    (
        samples.len() == 10_000 && rho.is_some_and(|r| r > 0.5) && control_rho == Some(1.0),
        format!("agent rho {rho:?} (> 0.5) over {} samples; calibrated control rho {control_rho:?}", samples.len()),
    )
}

fn c10_heatmap(agents: &Trained) -> Verdict {
    let m = grid(0.8, 1.2, 0.01);
    let tau = grid(1.0, 30.0, 1.0);
    let near = |mm: f64, t: f64| (mm - 1.0).abs() <= 0.02 + 1e-9 && t <= 5.0;
    let far = |mm: f64, t: f64| (mm - 1.0).abs() >= 0.10 - 1e-9 && t <= 5.0;
    let model = uncertainty_heatmap(&agents.uncertainty, &m, &tau, 0.2).unwrap();
    let (mn, mf) = (model.mean_where(near).unwrap(), model.mean_where(far).unwrap());
    let eps = EpisodeParams::default()
        .generate_batch(EVAL_SEED, seed::purpose::EVAL_EPISODES, EVAL_EPISODES)
        .unwrap();
    let realized = realized_variance_heatmap(&eps, &DeltaHedge, &CostModel::new(COST).unwrap(), &m, &tau, true).unwrap();
    let (rn, rf) = (
        realized.mean_where(near).unwrap_or(f64::NAN),
        realized.mean_where(far).unwrap_or(f64::NAN),
    );
    (
        mn > mf && rn > rf,
        format!("model sigma2 near {mn:.3e} vs far {mf:.3e}; delta realized variance near {rn:.3e} vs far {rf:.3e}"),
    )
}

fn c11_ingestion() -> Verdict {
    let params = GbmParams::default();
    let ep = EpisodeParams::default().generate(101).unwrap();
    let hist = simulate_gbm(&params, 40.0 / 365.0, 1.0 / 365.0, 102).unwrap();
    let start = NaiveDate::from_ymd_opt(2022, 3, 1).unwrap();
    let rows = synthetic_chain(&ep, start, &hist.prices).unwrap();
    let mut csv = Vec::new();
    write_chain_csv(&rows, &mut csv).unwrap();
    let out = ingest(parse_chain(csv.as_slice()).unwrap(), &EnvOptions::default());
    let policy = |s: &HedgeState| (0.3 + 0.5 * (s.moneyness - 0.95)).clamp(0.0, 1.0);
    let cost = CostModel::new(COST).unwrap();
    let direct = rollout(&ep, &policy, &cost).unwrap();
    let real = rollout(&out.episodes[0], &policy, &cost).unwrap();
    let worst_reward = direct
        .transitions
        .iter()
        .zip(&real.transitions)
        .map(|(a, b)| (a.reward - b.reward).abs())
        .fold(0.0, f64::max);
    let worst_vol = out.contracts[0]
        .1
        .iter()
        .map(|r| (r.features.as_ref().unwrap().sigma_impl - 0.2).abs())
        .fold(0.0, f64::max);
    let same_len = direct.transitions.len() == real.transitions.len();

    // moneyness within 20% and 15 to 40 days at the first quote, inclusive
    let day = |d: i64| start + chrono::Duration::days(d);
    let quote = |dte: i64, close: f64, offset: i64| OptionQuoteRow {
        quote_date: day(offset),
        expiry: day(dte),
        strike: 100.0,
        best_bid: 1.0,
        best_ask: 1.0,
        underlying_close: close,
    };
    let mut fixture = Vec::new();
    for dte in [14, 15, 40, 41] {
        fixture.push(quote(dte, 100.0, 0));
        fixture.push(quote(dte, 100.0, 1));
    }
    let kept: Vec<i64> = filter_universe(&fixture).iter().map(|e| e.days_to_expiry[0]).collect();
    let band = vec![quote(30, 80.0, 0), quote(30, 120.0, 1), quote(30, 79.9, 2), quote(30, 120.1, 3)];
    let band_kept = filter_universe(&band)[0].closes.clone();
    let fixture_ok = kept == [15, 40] && band_kept == [80.0, 120.0];
    (
        same_len && worst_reward <= 1e-9 && worst_vol <= 1e-4 && fixture_ok,
        format!(
            "reward gap {worst_reward:.1e} (1e-9), implied vol error {worst_vol:.1e} (1e-4), kept days {kept:?}, kept closes {band_kept:?}"
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c12_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    std::fs::write(
        &cfg,
        r#"{"master_seed": 3, "simulate_episodes": 4, "eval_episodes": 200, "calibration_samples": 1000, "mc_passes": 8,
            "train": {"episodes": 20, "warmup": 64, "batch_size": 32, "actor_hidden": [16, 16], "critic_hidden": [16, 16], "logvar_hidden": [8]}}"#,
    )
    .unwrap();
    let ep = EpisodeParams::default().generate(5).unwrap();
    let hist = simulate_gbm(&GbmParams::default(), 40.0 / 365.0, 1.0 / 365.0, 6).unwrap();
    let rows = synthetic_chain(&ep, NaiveDate::from_ymd_opt(2022, 1, 3).unwrap(), &hist.prices).unwrap();
    let chain = tmp.path().join("chain.csv");
    write_chain_csv(&rows, std::fs::File::create(&chain).unwrap()).unwrap();

    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut snaps = Vec::new();
    for k in 0..2 {
        let root = tmp.path().join(format!("run{k}"));
        let ck = s(&root.join("ckpt"));
        let jobs: Vec<Vec<String>> = vec![
            vec!["simulate".into(), "--out".into(), s(&root.join("sim"))],
            vec!["train".into(), "--out".into(), ck.clone()],
            vec!["evaluate".into(), "--out".into(), s(&root.join("eval")), "--checkpoint".into(), ck.clone(), "--no-hedge".into(), "--dump-trajectories".into()],
            vec!["evaluate".into(), "--out".into(), s(&root.join("step")), "--per-step".into()],
            vec!["heatmap".into(), "--out".into(), s(&root.join("hm")), "--checkpoint".into(), ck.clone()],
            vec!["calibrate".into(), "--out".into(), s(&root.join("cal")), "--checkpoint".into(), ck.clone()],
            vec!["ingest".into(), "--out".into(), s(&root.join("ing")), "--input".into(), s(&chain)],
        ];
        for job in jobs {
            let status = Command::new(env!("CARGO_BIN_EXE_deephedge"))
                .args(&job)
                .args(["--config", cfg.to_str().unwrap()])
                .output()
                .unwrap();
            if !status.status.success() {
                return (false, format!("{job:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
        }
        snaps.push(snapshot(&root));
    }
    let differing: Vec<&str> = snaps[0]
        .iter()
        .zip(&snaps[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let same_files = snaps[0].len() == snaps[1].len();
    (
        same_files && differing.is_empty(),
        format!("{} output files across 7 workflows; differing: {differing:?}", snaps[0].len()),
    )
}

fn main() {
    // DEEPHEDGE_ACCEPTANCE=1,6,7 runs a subset
    let only: Option<Vec<usize>> = std::env::var("DEEPHEDGE_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results: Vec<(usize, bool)> = Vec::new();
    let mut check = |n: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(n) {
            return;
        }
        let t0 = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(v) => v,
            Err(e) => (
                false,
                format!(
                    "panicked: {}",
                    e.downcast_ref::<String>()
                        .cloned()
                        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default()
                ),
            ),
        };
        println!(
            "{} criterion {n:>2} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
        results.push((n, pass));
    };

    check(1, "analytic pricing", &mut c1_analytic_pricing);
    check(2, "no-hedge distribution", &mut c2_no_hedge);
    check(3, "delta hedging without cost", &mut c3_delta_without_cost);
    check(4, "delta hedging with 1% cost", &mut c4_delta_with_cost);
    let agents = if [5, 9, 10].into_iter().any(wanted) {
        catch_unwind(train_desk_agents).ok()
    } else {
        None
    };
    match &agents {
        Some(a) => {
            check(5, "RL vs baseline ordering", &mut || c5_rl_ordering(a));
        }
        None => check(5, "RL vs baseline ordering", &mut || (false, "training failed".into())),
    }
    check(6, "baseline equivalence", &mut c6_baseline_equivalence);
    check(7, "gradient suite", &mut c7_gradient_suite);
    check(8, "MC-dropout properties", &mut c8_mc_dropout);
    match &agents {
        Some(a) => {
            check(9, "uncertainty calibration", &mut || c9_calibration(a));
            check(10, "heatmap property", &mut || c10_heatmap(a));
        }
        None => {
            check(9, "uncertainty calibration", &mut || (false, "training failed".into()));
            check(10, "heatmap property", &mut || (false, "training failed".into()));
        }
    }
    check(11, "real-data ingestion round trip", &mut c11_ingestion);
    check(12, "CLI determinism", &mut c12_determinism);

    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if !failed.is_empty() && std::env::var_os("DEEPHEDGE_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
