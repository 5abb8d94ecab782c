//! End-to-end runs: normalize, encode, train, evaluate on the held-out days.

use serde::{Deserialize, Serialize};

use crate::config::{FeatureKind, RunConfig};
use crate::encoder::{train_encoder, Encoder};
use crate::env::{oracle_profit, EnvConfig, PriceSeries, StepRecord};
use crate::error::{Error, Result};
use crate::model::{Fcnn, FcnnConfig, GMemConfig, GMemNet, Lstm, LstmConfig, ModelKind, QNetwork};
use crate::numerics::snapshot::Snapshot;
use crate::numerics::ParamStore;
use crate::rl::{evaluate, train, EvalReport, MarketData, TrainConfig, TrainObserver, TrainOutcome};
use crate::rng::SeedTree;

/// A constructed network of any supported architecture.
#[derive(Clone, Debug)]
pub enum AnyNet {
    GMem(GMemNet),
    Fcnn(Fcnn),
    Lstm(Lstm),
}

/// Run `$body` with `$net` bound to the concrete network inside an [`AnyNet`].
#[macro_export]
macro_rules! with_net {
    ($any:expr, $net:ident => $body:expr) => {
        match $any {
            $crate::pipeline::AnyNet::GMem($net) => $body,
            $crate::pipeline::AnyNet::Fcnn($net) => $body,
            $crate::pipeline::AnyNet::Lstm($net) => $body,
        }
    };
}

impl AnyNet {
    pub fn build(kind: ModelKind, cfg: &RunConfig, input_dim: usize) -> Result<Self> {
        let num_actions = cfg.env.task.actions().len();
        Ok(match kind {
            ModelKind::Gmemn2n | ModelKind::Memn2n => AnyNet::GMem(GMemNet::new(GMemConfig {
                input_dim,
                num_actions,
                gated: kind == ModelKind::Gmemn2n,
                ..cfg.gmemn2n.clone()
            })?),
            ModelKind::Fcnn => AnyNet::Fcnn(Fcnn::new(FcnnConfig {
                input_dim,
                num_actions,
                ..cfg.fcnn.clone()
            })?),
            ModelKind::Lstm => AnyNet::Lstm(Lstm::new(LstmConfig {
                input_dim,
                num_actions,
                ..cfg.lstm.clone()
            })?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        with_net!(self, n => n.kind())
    }

    pub fn header(&self) -> serde_json::Value {
        with_net!(self, n => n.header())
    }

    pub fn init_params(&self, rng: &mut crate::rng::Rng) -> ParamStore {
        with_net!(self, n => n.init_params(rng))
    }

    pub fn check_store(&self, store: &ParamStore) -> Result<()> {
        with_net!(self, n => n.check_store(store))
    }
}

/// Normalized prices, the fitted encoder (if any) and per-day features.
#[derive(Clone, Debug)]
pub struct PreparedSeries {
    pub name: String,
    /// Divisor applied to the raw prices: the maximum over the training days.
    pub scale: f64,
    pub data: MarketData,
    pub encoder: Option<Encoder>,
    pub encoder_loss: Vec<f64>,
}

impl PreparedSeries {
    pub fn input_dim(&self, cfg: &RunConfig) -> usize {
        match &self.encoder {
            Some(e) => e.hidden_dim(),
            None => cfg.window.window_len,
        }
    }
}

pub fn check_length(series: &PriceSeries, cfg: &RunConfig) -> Result<()> {
    let need = cfg.train_days + cfg.env.horizon;
    if series.len() < need {
        return Err(Error::InsufficientData(format!(
            "series {} has {} days, train_days + env.horizon needs {need}",
            series.name,
            series.len()
        )));
    }
    Ok(())
}

/// Normalize by the training-day maximum and compute features. A supplied
/// encoder is reused instead of training a new one.
pub fn prepare_series(series: &PriceSeries, cfg: &RunConfig, encoder: Option<Encoder>) -> Result<PreparedSeries> {
    check_length(series, cfg)?;
    let scale = series.opens[..cfg.train_days].iter().cloned().fold(f64::MIN, f64::max);
    let prices: Vec<f64> = series.opens.iter().map(|p| p / scale).collect();
    let window_len = cfg.window.window_len;
    let (encoder, loss) = match (cfg.features, encoder) {
        (FeatureKind::Raw | FeatureKind::Returns, _) => (None, Vec::new()),
        (FeatureKind::Encoder, Some(enc)) => {
            if enc.window.window_len != window_len {
                return Err(Error::InvalidConfig(vec![format!(
                    "encoder window_len {} differs from window.window_len {window_len}",
                    enc.window.window_len
                )]));
            }
            (Some(enc), Vec::new())
        }
        (FeatureKind::Encoder, None) => {
            let seed = SeedTree::new(cfg.seed).child(&format!("encoder/{}", series.name)).key();
            let (enc, loss) = train_encoder(&prices[..cfg.train_days], &cfg.window, &cfg.encoder, seed)?;
            (Some(enc), loss)
        }
    };
    let data = match &encoder {
        Some(enc) => MarketData::new(prices.clone(), enc.encode_series(&prices))?,
        None if cfg.features == FeatureKind::Returns => MarketData::return_windows(prices, window_len, cfg.train_days),
        None => MarketData::raw_windows(prices, window_len),
    };
    Ok(PreparedSeries {
        name: series.name.clone(),
        scale,
        data,
        encoder,
        encoder_loss: loss,
    })
}

/// Result of training and testing one model on one series.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub series: String,
    pub model: ModelKind,
    pub net: AnyNet,
    pub outcome: TrainOutcome,
    /// Rollouts at the evaluation temperature.
    pub report: EvalReport,
    pub logs: Vec<Vec<StepRecord>>,
    /// Terminal reward of the greedy policy on the test days.
    pub greedy_reward: f64,
    pub oracle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub series: String,
    pub model: ModelKind,
    pub best_restart: usize,
    pub greedy_reward: f64,
    pub oracle: f64,
    pub report: EvalReport,
}

impl RunResult {
    pub fn summary(&self) -> TestSummary {
        TestSummary {
            series: self.series.clone(),
            model: self.model,
            best_restart: self.outcome.best_restart,
            greedy_reward: self.greedy_reward,
            oracle: self.oracle,
            report: self.report.clone(),
        }
    }

    pub fn snapshot(&self, cfg: &RunConfig) -> Snapshot {
        policy_snapshot(&self.net, &self.outcome.params, cfg)
    }
}

pub fn policy_snapshot(net: &AnyNet, params: &ParamStore, cfg: &RunConfig) -> Snapshot {
    Snapshot::new(
        net.kind().as_str(),
        serde_json::json!({
            "model": net.header(),
            "features": cfg.features,
            "window_len": cfg.window.window_len,
            "seed": cfg.seed,
            "config": cfg.to_toml().unwrap_or_default(),
        }),
        params,
    )
}

pub fn train_config_for(cfg: &RunConfig, series: &str, model: ModelKind) -> TrainConfig {
    TrainConfig {
        seed: SeedTree::new(cfg.seed).child(&format!("train/{series}/{model}")).key(),
        ..cfg.train.clone()
    }
}

/// Test-segment environment: starts after the training days.
pub fn test_env(cfg: &RunConfig) -> (EnvConfig, usize) {
    (cfg.env_config(), cfg.train_days)
}

pub fn run_model(prepared: &PreparedSeries, cfg: &RunConfig, model: ModelKind, observer: &mut dyn TrainObserver) -> Result<RunResult> {
    let net = AnyNet::build(model, cfg, prepared.input_dim(cfg))?;
    let env = cfg.env_config();
    let tcfg = train_config_for(cfg, &prepared.name, model);
    let outcome = with_net!(&net, n => train(n, &prepared.data, 0..cfg.train_days, &env, &tcfg, observer))?;
    let (report, logs, greedy_reward) = test_policy(&net, &outcome.params, prepared, cfg)?;
    let oracle = oracle_profit(&prepared.data.prices, cfg.train_days, &env)?.optimum;
    Ok(RunResult {
        series: prepared.name.clone(),
        model,
        net,
        outcome,
        report,
        logs,
        greedy_reward,
        oracle,
    })
}

/// Evaluate `params` on the test days: rollouts at the evaluation
/// temperature plus one greedy episode.
pub fn test_policy(net: &AnyNet, params: &ParamStore, prepared: &PreparedSeries, cfg: &RunConfig) -> Result<(EvalReport, Vec<Vec<StepRecord>>, f64)> {
    let (env, start) = test_env(cfg);
    let seed = SeedTree::new(cfg.seed).child(&format!("eval/{}/{}", prepared.name, net.kind())).key();
    with_net!(net, n => {
        let (report, logs) = evaluate(n, params, &prepared.data, &env, start, cfg.eval_rollouts, cfg.train.eval_temperature, seed)?;
        let (_, greedy) = evaluate(n, params, &prepared.data, &env, start, 1, 0.0, seed)?;
        let last = greedy[0].last().map_or(env.initial_cash, |r| r.net_worth);
        Ok((report, logs, last - env.initial_cash))
    })
}

/// Every series named by the config: CSV files first, then generated ones.
pub fn load_series(cfg: &RunConfig) -> Result<Vec<PriceSeries>> {
    let mut out = Vec::new();
    for path in &cfg.series {
        out.push(PriceSeries::load_csv(path)?);
    }
    for s in &cfg.synthetic {
        out.push(crate::env::gen_synthetic(s.order, s.length, s.amplitude, s.seed));
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig(vec!["no series: set `series` or `synthetic`".into()]));
    }
    Ok(out)
}
