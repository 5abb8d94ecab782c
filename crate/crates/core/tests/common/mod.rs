#![allow(dead_code)]

use memtrader::config::RunConfig;
use memtrader::env::{Action, EnvConfig, Task, TradingEnv};
use memtrader::env::gen_synthetic;
use memtrader::model::{GMemConfig, GMemNet, QNetwork};
use memtrader::numerics::ParamStore;
use memtrader::rl::{train, EpisodeLog, MarketData, StepInfo, TrainConfig, TrainObserver, TrainOutcome};
use memtrader::rng::{stream, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

pub const PARITY_BENCH: &str = include_str!("../../../../configs/parity_bench.toml");

pub fn parity_config() -> RunConfig {
    RunConfig::from_toml(PARITY_BENCH, "configs/parity_bench.toml").expect("shipped config parses")
}

/// d=4, three input dims, two query dims, two hops, three actions.
pub fn tiny_gmem() -> GMemNet {
    GMemNet::new(GMemConfig {
        hops: 2,
        embed_dim: 4,
        input_dim: 3,
        num_actions: 3,
        max_mem: 8,
        ..GMemConfig::default()
    })
    .unwrap()
}

/// Parameters with every entry drawn from N(0, sigma).
pub fn random_params<N: QNetwork>(net: &N, rng: &mut Rng, sigma: f64) -> ParamStore {
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut store = net.init_params(rng);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v = normal.sample(rng);
        }
    }
    store
}

pub fn random_slots(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect()
}

/// Prices on a 1/64 grid, so every sum and difference in an episode is exact.
pub fn grid_prices(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(16..256) as f64 / 64.0).collect()
}

pub fn task_config(task: Task, horizon: usize) -> EnvConfig {
    let base = match task {
        Task::Trading => EnvConfig { initial_cash: 10.0, max_holdings: 5, ..EnvConfig::trading() },
        Task::ExecSell => EnvConfig { initial_holdings: 5, max_holdings: 5, ..EnvConfig::exec_sell() },
    };
    EnvConfig { horizon, window_len: 1, transaction_cost: 0.125, ..base }
}

/// Play `actions` from day `start`; returns the environment and the rewards.
pub fn play(cfg: &EnvConfig, prices: &[f64], start: usize, actions: &[Action]) -> (TradingEnv, Vec<f64>) {
    let (mut env, _) = TradingEnv::reset(cfg, prices, start).unwrap();
    let rewards = actions.iter().map(|&a| env.step(a).unwrap().reward).collect();
    (env, rewards)
}

pub fn random_actions(rng: &mut Rng, task: Task, n: usize) -> Vec<Action> {
    let acts = task.actions();
    (0..n).map(|_| acts[rng.random_range(0..acts.len())]).collect()
}

pub fn rng(seed: u64) -> Rng {
    stream(seed, "tests")
}

/// Best terminal reward over every action sequence, by exhaustive search.
pub fn brute_force_optimum(cfg: &EnvConfig, prices: &[f64], start: usize) -> f64 {
    let acts = cfg.task.actions();
    let n = acts.len().pow(cfg.horizon as u32);
    let mut best = f64::NEG_INFINITY;
    for mut code in 0..n {
        let seq: Vec<Action> = (0..cfg.horizon)
            .map(|_| {
                let a = acts[code % acts.len()];
                code /= acts.len();
                a
            })
            .collect();
        let (_, rewards) = play(cfg, prices, start, &seq);
        best = best.max(*rewards.last().unwrap());
    }
    best
}

/// Replays the ledger: cash and holdings implied by the executed orders alone.
pub fn reconstruct(cfg: &EnvConfig, prices: &[f64], start: usize, executed: &[Action]) -> (f64, u32) {
    let lot = cfg.lot_size;
    let (mut cash, mut holdings) = (cfg.initial_cash, cfg.initial_holdings);
    for (t, a) in executed.iter().enumerate() {
        let price = prices[start + t];
        match a {
            Action::Buy => {
                cash = cash - price * lot as f64 - cfg.transaction_cost;
                holdings += lot;
            }
            Action::Sell => {
                cash = cash + price * lot as f64 - cfg.transaction_cost;
                holdings -= lot;
            }
            Action::Hold => {}
        }
    }
    (cash, holdings)
}

/// Records what the trainer exposes after every action step.
#[derive(Default)]
pub struct Probe {
    /// (steps, updates, lr, linear_start) per step.
    pub steps: Vec<(u64, u64, f64, bool)>,
    /// Steps at a copy boundary where target and online agreed exactly.
    pub boundaries_equal: Vec<u64>,
    pub boundaries_differ: Vec<u64>,
    /// Steps off a boundary where the target moved.
    pub target_moved: Vec<u64>,
    pub online_moved: bool,
    pub episodes: Vec<EpisodeLog>,
    prev_target: Option<ParamStore>,
    target_update: u64,
}

impl Probe {
    pub fn new(target_update: u64) -> Self {
        Probe { target_update, ..Probe::default() }
    }
}

impl TrainObserver for Probe {
    fn on_step(&mut self, info: &StepInfo<'_>) {
        if info.steps == 1 {
            self.prev_target = None;
        }
        self.steps.push((info.steps, info.updates, info.lr, info.linear_start));
        if info.steps % self.target_update == 0 {
            if info.target.values_equal(info.online) {
                self.boundaries_equal.push(info.steps);
            } else {
                self.boundaries_differ.push(info.steps);
            }
        } else {
            if let Some(prev) = &self.prev_target {
                if !prev.values_equal(info.target) {
                    self.target_moved.push(info.steps);
                }
            }
            self.online_moved |= !info.target.values_equal(info.online);
        }
        self.prev_target = Some(info.target.clone());
    }

    fn on_episode(&mut self, log: &EpisodeLog) {
        self.episodes.push(log.clone());
    }
}

/// Small memory-network run with short schedule periods, so every
/// transition happens within a few hundred updates.
pub fn mechanics_setup(seed: u64) -> (GMemNet, MarketData, EnvConfig, TrainConfig) {
    let net = GMemNet::new(GMemConfig {
        hops: 2,
        embed_dim: 4,
        input_dim: 3,
        max_mem: 32,
        ..GMemConfig::default()
    })
    .unwrap();
    let prices = gen_synthetic(2, 120, 0.01, seed).opens;
    let data = MarketData::raw_windows(prices, 3);
    let env = EnvConfig { window_len: 3, horizon: 20, initial_cash: 1.0, max_holdings: 1, ..EnvConfig::trading() };
    let tcfg = TrainConfig {
        episodes: 70,
        episode_len: Some(6),
        batch_size: 8,
        warmup: 32,
        restarts: 1,
        epoch_updates: 10,
        lr_period_epochs: 3,
        lr_stop_epochs: 10,
        linear_start_epochs: 5,
        target_update: 100,
        seed,
        ..TrainConfig::default()
    };
    (net, data, env, tcfg)
}

pub fn mechanics_run(seed: u64) -> (TrainConfig, Probe, TrainOutcome) {
    let (net, data, env, tcfg) = mechanics_setup(seed);
    let mut probe = Probe::new(tcfg.target_update);
    let outcome = train(&net, &data, 0..100, &env, &tcfg, &mut probe).unwrap();
    (tcfg, probe, outcome)
}

/// Learning rate in force for the update that brought the count to `updates`.
pub fn expected_lr(cfg: &TrainConfig, updates: u64) -> f64 {
    let sched = cfg.lr_schedule();
    let done = updates.saturating_sub(1).min(sched.stop);
    cfg.lr * 0.5f64.powi((done / sched.period) as i32)
}
