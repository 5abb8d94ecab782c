//! Double Q-learning with prioritized replay and multi-restart selection.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport, MarketData};
use super::replay::{PerConfig, PrioritizedBuffer};
use super::schedule::{linear, progress, LrSchedule};
use crate::env::{EnvConfig, TradingEnv};
use crate::error::{Error, Result};
use crate::model::{argmax, boltzmann, AgentQuery, ForwardOpts, HistoryView, QNetwork};
use crate::numerics::{adam_step, clip_by_global_norm, AdamConfig, ParamStore};
use crate::rng::{stream, Rng, SeedTree};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Gradient updates that make up one epoch of the schedules.
    pub epoch_updates: u64,
    pub lr_period_epochs: u64,
    pub lr_stop_epochs: u64,
    /// Epochs trained with linear attention before the softmax is restored.
    pub linear_start_epochs: u64,
    /// Action steps between copies of the online network into the target.
    pub target_update: u64,
    pub gamma: f64,
    pub temperature_start: f64,
    pub temperature_end: f64,
    /// Temperature of evaluation rollouts.
    pub eval_temperature: f64,
    pub restarts: usize,
    pub buffer_capacity: usize,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub per_eps: f64,
    /// Transitions collected before the first update.
    pub warmup: usize,
    pub clip_norm: f64,
    /// Trailing share of the training window held out for restart selection.
    pub validation_fraction: f64,
    /// Decisions per training episode; defaults to the whole training span.
    pub episode_len: Option<usize>,
    pub divergence_limit: f64,
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 10_000,
            batch_size: 32,
            lr: 1e-3,
            epoch_updates: 100,
            lr_period_epochs: 30,
            lr_stop_epochs: 100,
            linear_start_epochs: 30,
            target_update: 100,
            gamma: 1.0,
            temperature_start: 1.0,
            temperature_end: 0.1,
            eval_temperature: 0.1,
            restarts: 20,
            buffer_capacity: 50_000,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            per_eps: 1e-6,
            warmup: 1000,
            clip_norm: 10.0,
            validation_fraction: 0.2,
            episode_len: None,
            divergence_limit: 1e6,
            reward_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let counts = [
            ("batch_size", self.batch_size as u64),
            ("epoch_updates", self.epoch_updates),
            ("target_update", self.target_update),
            ("restarts", self.restarts as u64),
            ("buffer_capacity", self.buffer_capacity as u64),
        ];
        for (name, v) in counts {
            if v == 0 {
                errs.push(format!("train.{name} must be at least 1"));
            }
        }
        if self.buffer_capacity < self.batch_size {
            errs.push("train.buffer_capacity must be at least train.batch_size".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) && self.gamma != 0.0 {
            errs.push("train.gamma must lie in [0, 1]".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            errs.push("train.lr must be finite and non-negative".into());
        }
        for (name, v) in [
            ("temperature_start", self.temperature_start),
            ("temperature_end", self.temperature_end),
            ("eval_temperature", self.eval_temperature),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("train.{name} must be finite and non-negative"));
            }
        }
        if !(self.per_alpha >= 0.0) {
            errs.push("train.per_alpha must be non-negative".into());
        }
        if !(self.per_eps > 0.0) {
            errs.push("train.per_eps must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            errs.push("train.clip_norm must be positive".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            errs.push("train.validation_fraction must lie in (0, 1)".into());
        }
        if self.episode_len == Some(0) {
            errs.push("train.episode_len must be at least 1".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            errs.push("train.reward_scale must be positive".into());
        }
        errs
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            period: self.lr_period_epochs * self.epoch_updates,
            stop: self.lr_stop_epochs * self.epoch_updates,
        }
    }

    pub fn linear_start_updates(&self) -> u64 {
        self.linear_start_epochs * self.epoch_updates
    }
}

/// One stored experience; the observation prefix lives in the episode table.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub episode: usize,
    pub t: usize,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

/// Start day and agent queries of an episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    pub start_day: usize,
    pub queries: Vec<AgentQuery>,
}

/// A transition resolved against its episode, ready for the TD loss.
#[derive(Clone, Copy, Debug)]
pub struct TdSample<'a> {
    pub state: HistoryView<'a>,
    /// `None` for terminal transitions.
    pub next: Option<HistoryView<'a>>,
    pub action: usize,
    pub reward: f64,
    pub weight: f64,
}

/// Online and target parameters with their precomputed caches.
pub struct QPair<'a, N: QNetwork> {
    pub online: &'a ParamStore,
    pub online_cache: &'a N::Cache,
    pub target: &'a ParamStore,
    pub target_cache: &'a N::Cache,
}

/// `y = r` for terminal transitions, otherwise
/// `r + γ Q_target(s', argmax_a Q_online(s', a))`.
pub fn td_target<N: QNetwork>(net: &N, pair: &QPair<'_, N>, next: Option<&HistoryView<'_>>, reward: f64, gamma: f64, linear_start: bool) -> Result<f64> {
    let Some(next) = next else { return Ok(reward) };
    if gamma == 0.0 {
        return Ok(reward);
    }
    let q_online = net.q_values(pair.online, pair.online_cache, next, &mut ForwardOpts::eval(linear_start))?;
    let q_target = net.q_values(pair.target, pair.target_cache, next, &mut ForwardOpts::eval(linear_start))?;
    Ok(reward + gamma * q_target[argmax(&q_online)])
}

fn sample_noise(noise_seed: Option<u64>, i: usize) -> Option<Rng> {
    noise_seed.map(|s| stream(s, &format!("td/{i}")))
}

/// Importance-weighted TD loss `(1/B) Σ w_i (Q(s_i, a_i) − y_i)²`.
///
/// With a noise seed, sample `i` draws its memory noise from a stream keyed
/// by `i`, so repeated evaluations agree.
pub fn td_loss<N: QNetwork>(
    net: &N,
    online: &ParamStore,
    target: &ParamStore,
    features: &[Vec<f64>],
    batch: &[TdSample<'_>],
    gamma: f64,
    linear_start: bool,
    noise_seed: Option<u64>,
) -> Result<f64> {
    let all = 0..features.len();
    let oc = net.prepare(online, features, all.clone())?;
    let tc = net.prepare(target, features, all)?;
    let pair = QPair::<N> {
        online,
        online_cache: &oc,
        target,
        target_cache: &tc,
    };
    let mut loss = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let y = td_target(net, &pair, s.next.as_ref(), s.reward, gamma, linear_start)?;
        let mut rng = sample_noise(noise_seed, i);
        let q = net.q_values(online, &oc, &s.state, &mut ForwardOpts { linear_start, noise: rng.as_mut() })?;
        loss += s.weight * (q[s.action] - y).powi(2);
    }
    Ok(loss / batch.len() as f64)
}

/// Accumulate the gradient of [`td_loss`] into `online`'s gradient slots.
/// Returns the loss, the TD errors `y − Q(s, a)` and the largest |Q| seen.
#[allow(clippy::too_many_arguments)]
pub fn td_backward<N: QNetwork>(
    net: &N,
    online: &mut ParamStore,
    online_cache: &mut N::Cache,
    target: &ParamStore,
    target_cache: &N::Cache,
    features: &[Vec<f64>],
    batch: &[TdSample<'_>],
    gamma: f64,
    linear_start: bool,
    noise_seed: Option<u64>,
) -> Result<(f64, Vec<f64>, f64)> {
    let pair = QPair::<N> {
        online,
        online_cache,
        target,
        target_cache,
    };
    let ys = batch
        .iter()
        .map(|s| td_target(net, &pair, s.next.as_ref(), s.reward, gamma, linear_start))
        .collect::<Result<Vec<f64>>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut errors = Vec::with_capacity(batch.len());
    let mut max_q = 0.0f64;
    for (i, (s, &y)) in batch.iter().zip(&ys).enumerate() {
        let mut rng = sample_noise(noise_seed, i);
        let mut delta = 0.0;
        let q = net.forward_backward(
            online,
            online_cache,
            &s.state,
            &mut ForwardOpts { linear_start, noise: rng.as_mut() },
            &mut |q: &[f64]| {
                delta = y - q[s.action];
                let mut g = vec![0.0; q.len()];
                g[s.action] = -2.0 * s.weight * delta / n;
                g
            },
        )?;
        max_q = q.iter().fold(max_q, |m, v| m.max(v.abs()));
        loss += s.weight * delta * delta;
        errors.push(delta);
    }
    net.flush_grads(online, online_cache, features);
    Ok((loss / n, errors, max_q))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub restart: usize,
    pub episode: usize,
    pub start_day: usize,
    pub terminal_reward: f64,
    pub temperature: f64,
    pub lr: f64,
    pub steps: u64,
    pub updates: u64,
    pub aborted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub steps: u64,
    pub updates: u64,
    pub aborted: Option<String>,
    pub validation: Option<EvalReport>,
}

/// State visible to an observer after each action step.
pub struct StepInfo<'a> {
    pub restart: usize,
    pub episode: usize,
    /// Action steps taken in this restart, including the current one.
    pub steps: u64,
    /// Gradient updates performed so far.
    pub updates: u64,
    /// Learning rate of the most recent update.
    pub lr: f64,
    pub linear_start: bool,
    pub online: &'a ParamStore,
    pub target: &'a ParamStore,
}

pub trait TrainObserver {
    fn on_step(&mut self, _info: &StepInfo<'_>) {}
    fn on_episode(&mut self, _log: &EpisodeLog) {}
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_restart: usize,
    pub params: ParamStore,
    pub restarts: Vec<RestartSummary>,
    pub log: Vec<EpisodeLog>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.log {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Day layout of a training run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    /// Allowed first days of training episodes.
    pub starts: Range<usize>,
    pub episode_len: usize,
    pub validation_start: usize,
    pub validation_len: usize,
}

pub fn split(window: Range<usize>, env_cfg: &EnvConfig, cfg: &TrainConfig) -> Result<Split> {
    let total = window.len();
    let validation_len = ((total as f64 * cfg.validation_fraction).round() as usize).max(1);
    let validation_start = window.end - validation_len;
    let first = window.start.max(env_cfg.window_len);
    if validation_start <= first || validation_start < env_cfg.window_len {
        return Err(Error::InsufficientData(format!(
            "training window {window:?} leaves no training days before the validation segment"
        )));
    }
    let episode_len = cfg.episode_len.unwrap_or(validation_start - first);
    if first + episode_len > validation_start {
        return Err(Error::InsufficientData(format!(
            "episode length {episode_len} exceeds the {} training days",
            validation_start - first
        )));
    }
    if episode_len < env_cfg.window_len || validation_len < env_cfg.window_len {
        return Err(Error::InsufficientData("episodes must be at least as long as the observation window".into()));
    }
    Ok(Split {
        starts: first..validation_start - episode_len + 1,
        episode_len,
        validation_start,
        validation_len,
    })
}

struct RestartResult {
    params: ParamStore,
    summary: RestartSummary,
}

/// Train `cfg.restarts` independent networks on the days of `window` and
/// keep the one with the best validation profitability ratio, ties broken by
/// validation budget.
pub fn train<N: QNetwork>(
    net: &N,
    data: &MarketData,
    window: Range<usize>,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let mut errs = cfg.validate();
    errs.extend(env_cfg.validate());
    if net.num_actions() != env_cfg.task.actions().len() {
        errs.push(format!(
            "model has {} outputs but task {:?} has {} actions",
            net.num_actions(),
            env_cfg.task,
            env_cfg.task.actions().len()
        ));
    }
    if window.end > data.len() {
        errs.push(format!("training window {window:?} exceeds the {} available days", data.len()));
    }
    if !errs.is_empty() {
        return Err(Error::InvalidConfig(errs));
    }
    let layout = split(window, env_cfg, cfg)?;
    let tree = SeedTree::new(cfg.seed);
    let mut log = Vec::new();
    let mut results = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let res = train_restart(net, data, &layout, env_cfg, cfg, r, tree.child(&format!("restart/{r}")), observer, &mut log)?;
        results.push(res);
    }
    let best = results
        .iter()
        .enumerate()
        .filter_map(|(i, res)| res.summary.validation.as_ref().map(|v| (i, v)))
        .fold(None::<(usize, &EvalReport)>, |acc, (i, v)| match acc {
            Some((_, b)) if (b.ratio_mean, b.budget_mean) >= (v.ratio_mean, v.budget_mean) => acc,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Diverged(format!("all {} restarts aborted", cfg.restarts)))?;
    let params = results[best].params.clone();
    Ok(TrainOutcome {
        best_restart: best,
        params,
        restarts: results.into_iter().map(|r| r.summary).collect(),
        log,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_restart<N: QNetwork>(
    net: &N,
    data: &MarketData,
    layout: &Split,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    restart: usize,
    seeds: SeedTree,
    observer: &mut dyn TrainObserver,
    log: &mut Vec<EpisodeLog>,
) -> Result<RestartResult> {
    let mut online = net.init_params(&mut seeds.stream("init"));
    let mut target = online.clone();
    let mut start_rng = seeds.stream("start");
    let mut policy_rng = seeds.stream("policy");
    let mut replay_rng = seeds.stream("replay");
    let mut noise_rng = seeds.stream("noise");
    let mut buffer: PrioritizedBuffer<Transition> = PrioritizedBuffer::new(PerConfig {
        capacity: cfg.buffer_capacity,
        alpha: cfg.per_alpha,
        eps: cfg.per_eps,
    });
    let schedule = cfg.lr_schedule();
    let linear_updates = cfg.linear_start_updates();
    let episode_cfg = env_cfg.with_horizon(layout.episode_len);
    let actions = env_cfg.task.actions();
    let rows = layout.starts.start..layout.validation_start;
    let mut episodes: Vec<EpisodeTrace> = Vec::with_capacity(cfg.episodes);
    let mut steps: u64 = 0;
    let mut updates: u64 = 0;
    let mut lr = schedule.lr(0);
    let mut aborted: Option<String> = None;
    let mut online_cache = net.prepare(&online, &data.features, rows.clone())?;
    let mut target_cache = net.prepare(&target, &data.features, rows.clone())?;

    'episodes: for ep in 0..cfg.episodes {
        let temperature = linear(cfg.temperature_start, cfg.temperature_end, progress(ep, cfg.episodes));
        let beta = linear(cfg.per_beta_start, cfg.per_beta_end, progress(ep, cfg.episodes));
        let start = start_rng.random_range(layout.starts.clone());
        let (mut env, _) = TradingEnv::reset(&episode_cfg, &data.prices, start)?;
        episodes.push(EpisodeTrace {
            start_day: start,
            queries: vec![env.query()],
        });
        let ep_idx = episodes.len() - 1;
        let mut terminal = 0.0;
        for t in 0..layout.episode_len {
            let linear_start = updates < linear_updates;
            let view = HistoryView {
                features: &data.features,
                start_day: start,
                t,
                queries: &episodes[ep_idx].queries,
            };
            let q = net.q_values(&online, &online_cache, &view, &mut ForwardOpts::eval(linear_start))?;
            if let Some(msg) = diverged(&q, cfg.divergence_limit) {
                aborted = Some(msg);
                break 'episodes;
            }
            let (a, _) = boltzmann(&q, temperature, &mut policy_rng);
            let res = env.step(actions[a])?;
            if res.done {
                terminal = res.reward;
            } else {
                episodes[ep_idx].queries.push(env.query());
            }
            buffer.push(Transition {
                episode: ep_idx,
                t,
                action: a,
                reward: res.reward * cfg.reward_scale,
                done: res.done,
            });

            if buffer.len() >= cfg.warmup.max(cfg.batch_size) {
                let linear_start = updates < linear_updates;
                let sampled = buffer.sample(cfg.batch_size, beta, &mut replay_rng)?;
                let batch: Vec<TdSample<'_>> = sampled
                    .indices
                    .iter()
                    .zip(&sampled.weights)
                    .map(|(&i, &w)| resolve(buffer.get(i), &episodes, &data.features, w))
                    .collect();
                online.zero_grads();
                let noise_seed = noise_rng.random::<u64>();
                let (loss, errors, max_q) = td_backward(
                    net,
                    &mut online,
                    &mut online_cache,
                    &target,
                    &target_cache,
                    &data.features,
                    &batch,
                    cfg.gamma,
                    linear_start,
                    Some(noise_seed),
                )?;
                if let Some(msg) = diverged(&[max_q], cfg.divergence_limit) {
                    aborted = Some(msg);
                    break 'episodes;
                }
                if !loss.is_finite() {
                    aborted = Some("non-finite TD loss".into());
                    break 'episodes;
                }
                clip_by_global_norm(&mut online, cfg.clip_norm);
                lr = schedule.lr(updates);
                adam_step(&mut online, &AdamConfig { lr, ..AdamConfig::default() });
                online.zero_grads();
                buffer.update_priorities(&sampled.indices, &errors);
                updates += 1;
                online_cache = net.prepare(&online, &data.features, rows.clone())?;
            }

            steps += 1;
            if steps % cfg.target_update == 0 {
                target = online.clone();
                target_cache = net.prepare(&target, &data.features, rows.clone())?;
            }
            observer.on_step(&StepInfo {
                restart,
                episode: ep,
                steps,
                updates,
                lr,
                linear_start: updates < linear_updates,
                online: &online,
                target: &target,
            });
        }
        let rec = EpisodeLog {
            restart,
            episode: ep,
            start_day: start,
            terminal_reward: terminal,
            temperature,
            lr,
            steps,
            updates,
            aborted: false,
        };
        observer.on_episode(&rec);
        log.push(rec);
    }

    if let Some(reason) = &aborted {
        let rec = EpisodeLog {
            restart,
            episode: episodes.len().saturating_sub(1),
            start_day: episodes.last().map_or(0, |e| e.start_day),
            terminal_reward: 0.0,
            temperature: 0.0,
            lr,
            steps,
            updates,
            aborted: true,
        };
        observer.on_episode(&rec);
        log.push(rec);
        return Ok(RestartResult {
            params: online,
            summary: RestartSummary {
                restart,
                steps,
                updates,
                aborted: Some(reason.clone()),
                validation: None,
            },
        });
    }

    let val_cfg = env_cfg.with_horizon(layout.validation_len);
    let (report, _) = evaluate(net, &online, data, &val_cfg, layout.validation_start, 1, 0.0, 0)?;
    Ok(RestartResult {
        params: online,
        summary: RestartSummary {
            restart,
            steps,
            updates,
            aborted: None,
            validation: Some(report),
        },
    })
}

fn diverged(q: &[f64], limit: f64) -> Option<String> {
    q.iter()
        .find(|v| !v.is_finite() || v.abs() > limit)
        .map(|v| format!("Q-value {v} exceeds the divergence limit {limit}"))
}

/// View a stored transition as a TD sample.
pub fn resolve<'a>(tr: &Transition, episodes: &'a [EpisodeTrace], features: &'a [Vec<f64>], weight: f64) -> TdSample<'a> {
    let ep = &episodes[tr.episode];
    let state = HistoryView {
        features,
        start_day: ep.start_day,
        t: tr.t,
        queries: &ep.queries,
    };
    TdSample {
        state,
        next: (!tr.done).then_some(HistoryView { t: tr.t + 1, ..state }),
        action: tr.action,
        reward: tr.reward,
        weight,
    }
}
