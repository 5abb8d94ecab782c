//! Policy rollouts and summary statistics.

use serde::{Deserialize, Serialize};

use crate::env::{profitability_ratio, EnvConfig, StepRecord, TradingEnv};
use crate::error::{Error, Result};
use crate::model::{boltzmann, AgentQuery, ForwardOpts, HistoryView, QNetwork};
use crate::numerics::ParamStore;
use crate::rng::{Rng, SeedTree};

/// Normalized prices and the encoded feature of every day.
#[derive(Clone, Debug, Default)]
pub struct MarketData {
    pub prices: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

impl MarketData {
    pub fn new(prices: Vec<f64>, features: Vec<Vec<f64>>) -> Result<Self> {
        if prices.len() != features.len() {
            return Err(Error::shape("one feature vector per price is required"));
        }
        Ok(MarketData { prices, features })
    }

    /// Features equal to the raw price window ending on each day.
    pub fn raw_windows(prices: Vec<f64>, window_len: usize) -> Self {
        let features = crate::encoder::windows_by_day(&prices, window_len, <[f64]>::to_vec);
        MarketData { prices, features }
    }

    /// Features equal to the last `window_len` daily price changes, divided
    /// by their root mean square over the first `fit_days` days.
    pub fn return_windows(prices: Vec<f64>, window_len: usize, fit_days: usize) -> Self {
        let changes: Vec<f64> = std::iter::once(0.0).chain(prices.windows(2).map(|w| w[1] - w[0])).collect();
        let fit = &changes[1..fit_days.clamp(1, changes.len().max(1))];
        let rms = (fit.iter().map(|c| c * c).sum::<f64>() / fit.len().max(1) as f64).sqrt();
        let scale = if rms > 0.0 { rms } else { 1.0 };
        let features = (0..prices.len())
            .map(|d| if d >= window_len { changes[d + 1 - window_len..=d].iter().map(|c| c / scale).collect() } else { Vec::new() })
            .collect();
        MarketData { prices, features }
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Mean and spread of rollout outcomes; the spread is the population
/// standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ratio_mean: f64,
    pub ratio_std: f64,
    pub budget_mean: f64,
    pub budget_std: f64,
    pub rollouts: usize,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    /// Summarize episode logs of a run that started with `initial_cash`.
    pub fn from_logs(logs: &[Vec<StepRecord>], initial_cash: f64) -> Self {
        let ratios: Vec<f64> = logs
            .iter()
            .map(|log| {
                let trace: Vec<f64> = log.iter().map(|r| r.net_worth).collect();
                profitability_ratio(&trace, initial_cash)
            })
            .collect();
        let budgets: Vec<f64> = logs.iter().map(|log| log.last().map_or(initial_cash, |r| r.net_worth)).collect();
        let (ratio_mean, ratio_std) = mean_std(&ratios);
        let (budget_mean, budget_std) = mean_std(&budgets);
        EvalReport {
            ratio_mean,
            ratio_std,
            budget_mean,
            budget_std,
            rollouts: logs.len(),
        }
    }
}

/// Run one episode from day `start` with a Boltzmann policy at `temperature`.
#[allow(clippy::too_many_arguments)]
pub fn rollout<N: QNetwork>(
    net: &N,
    store: &ParamStore,
    cache: &N::Cache,
    data: &MarketData,
    env_cfg: &EnvConfig,
    start: usize,
    temperature: f64,
    linear_start: bool,
    rng: &mut Rng,
) -> Result<Vec<StepRecord>> {
    let actions = env_cfg.task.actions();
    if net.num_actions() != actions.len() {
        return Err(Error::InvalidConfig(vec![format!(
            "network has {} outputs but the task has {} actions",
            net.num_actions(),
            actions.len()
        )]));
    }
    let (mut env, _) = TradingEnv::reset(env_cfg, &data.prices, start)?;
    let mut queries: Vec<AgentQuery> = Vec::with_capacity(env_cfg.horizon);
    let mut log = Vec::with_capacity(env_cfg.horizon);
    for t in 0..env_cfg.horizon {
        queries.push(env.query());
        let view = HistoryView {
            features: &data.features,
            start_day: start,
            t,
            queries: &queries,
        };
        let q = net.q_values(store, cache, &view, &mut ForwardOpts::eval(linear_start))?;
        let (a, _) = boltzmann(&q, temperature, rng);
        let price = env.current_price();
        let res = env.step(actions[a])?;
        log.push(env.record(actions[a], res.executed, price));
    }
    Ok(log)
}

/// Evaluate `rollouts` episodes starting on day `start`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<N: QNetwork>(
    net: &N,
    store: &ParamStore,
    data: &MarketData,
    env_cfg: &EnvConfig,
    start: usize,
    rollouts: usize,
    temperature: f64,
    seed: u64,
) -> Result<(EvalReport, Vec<Vec<StepRecord>>)> {
    if rollouts == 0 {
        return Err(Error::InvalidConfig(vec!["rollouts must be at least 1".into()]));
    }
    let end = (start + env_cfg.horizon).min(data.len());
    let cache = net.prepare(store, &data.features, start..end)?;
    let tree = SeedTree::new(seed);
    let logs = (0..rollouts)
        .map(|i| {
            let mut rng = tree.stream(&format!("rollout/{i}"));
            rollout(net, store, &cache, data, env_cfg, start, temperature, false, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((EvalReport::from_logs(&logs, env_cfg.initial_cash), logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action;
    use crate::model::{Fcnn, FcnnConfig};
    use crate::rng::stream;

    fn setup(prices: Vec<f64>) -> (Fcnn, ParamStore, MarketData, EnvConfig) {
        let env = EnvConfig {
            horizon: 20,
            window_len: 3,
            initial_cash: 5.0,
            ..EnvConfig::trading()
        };
        let data = MarketData::raw_windows(prices, 3);
        let net = Fcnn::new(FcnnConfig { input_dim: 3, ..FcnnConfig::default() }).unwrap();
        let store = net.init_params(&mut stream(0, "i"));
        (net, store, data, env)
    }

    #[test]
    fn greedy_rollouts_have_zero_spread() {
        let prices: Vec<f64> = (0..30).map(|i| 1.0 + 0.1 * ((i * 7) % 5) as f64).collect();
        let (net, store, data, env) = setup(prices);
        let (report, _) = evaluate(&net, &store, &data, &env, 5, 7, 0.0, 1).unwrap();
        assert_eq!(report.ratio_std, 0.0);
        assert_eq!(report.budget_std, 0.0);
        assert_eq!(report.rollouts, 7);
    }

    #[test]
    fn constant_prices_only_lose_fees() {
        let (net, store, data, env) = setup(vec![1.0; 30]);
        let (report, logs) = evaluate(&net, &store, &data, &env, 5, 10, 1.0, 2).unwrap();
        assert!(report.budget_mean <= env.initial_cash);
        for log in &logs {
            let orders = log.iter().filter(|r| r.action_executed != Action::Hold).count() as f64;
            let last = log.last().unwrap().net_worth;
            assert!((last - (env.initial_cash - orders * env.transaction_cost)).abs() < 1e-12);
        }
    }

    #[test]
    fn report_matches_log_recomputation() {
        let prices: Vec<f64> = (0..30).map(|i| 1.0 + 0.3 * (i as f64 * 0.9).sin()).collect();
        let (net, store, data, env) = setup(prices);
        let (report, logs) = evaluate(&net, &store, &data, &env, 4, 12, 1.0, 3).unwrap();
        let mut ratios = Vec::new();
        let mut budgets = Vec::new();
        for log in &logs {
            assert_eq!(log.len(), 20);
            ratios.push(log.iter().filter(|r| r.net_worth > 5.0).count() as f64 / 20.0);
            budgets.push(log[19].net_worth);
        }
        let m = ratios.iter().sum::<f64>() / 12.0;
        let b = budgets.iter().sum::<f64>() / 12.0;
        assert!((report.ratio_mean - m).abs() < 1e-12);
        assert!((report.budget_mean - b).abs() < 1e-12);
        assert!(report.ratio_std >= 0.0 && (0.0..=1.0).contains(&report.ratio_mean));
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
