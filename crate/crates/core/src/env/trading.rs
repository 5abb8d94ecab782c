use serde::{Deserialize, Serialize};

use super::net_worth;
use crate::error::{Error, Result};
use crate::model::AgentQuery;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Speculative trading with Buy, Hold and Sell.
    Trading,
    /// Optimized execution: liquidate an initial position with Hold and Sell.
    ExecSell,
}

impl Task {
    pub fn actions(self) -> &'static [Action] {
        match self {
            Task::Trading => &[Action::Buy, Action::Hold, Action::Sell],
            Task::ExecSell => &[Action::Hold, Action::Sell],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Buy,
    Hold,
    Sell,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Action::Buy => "buy",
            Action::Hold => "hold",
            Action::Sell => "sell",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub task: Task,
    /// Shares exchanged per executed order.
    pub lot_size: u32,
    /// Fixed cost per executed order, in normalized price units.
    pub transaction_cost: f64,
    /// Number of decisions per episode.
    pub horizon: usize,
    pub initial_cash: f64,
    pub initial_holdings: u32,
    pub window_len: usize,
    /// Buys that would exceed this position are coerced to Hold.
    pub max_holdings: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::trading()
    }
}

impl EnvConfig {
    pub fn trading() -> Self {
        EnvConfig {
            task: Task::Trading,
            lot_size: 1,
            transaction_cost: 0.001,
            horizon: 200,
            initial_cash: 50.0,
            initial_holdings: 0,
            window_len: 10,
            max_holdings: 50,
        }
    }

    pub fn exec_sell() -> Self {
        EnvConfig {
            task: Task::ExecSell,
            horizon: 100,
            initial_holdings: 50,
            ..EnvConfig::trading()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.lot_size == 0 {
            errs.push("env.lot_size must be at least 1".into());
        }
        if !(self.transaction_cost >= 0.0 && self.transaction_cost.is_finite()) {
            errs.push("env.transaction_cost must be finite and non-negative".into());
        }
        if !(self.initial_cash >= 0.0 && self.initial_cash.is_finite()) {
            errs.push("env.initial_cash must be finite and non-negative".into());
        }
        if self.window_len == 0 {
            errs.push("env.window_len must be at least 1".into());
        }
        if self.horizon < self.window_len {
            errs.push(format!(
                "env.horizon ({}) must be at least env.window_len ({})",
                self.horizon, self.window_len
            ));
        }
        if self.initial_holdings > self.max_holdings {
            errs.push("env.initial_holdings exceeds env.max_holdings".into());
        }
        errs
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        EnvConfig {
            horizon,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub cash: f64,
    pub holdings: u32,
    pub initial_cash: f64,
    /// Decisions taken so far in the episode.
    pub t: usize,
}

/// Running totals of executed orders.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub buy_costs: f64,
    pub sell_proceeds: f64,
    pub fees: f64,
    pub shares_bought: u64,
    pub shares_sold: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// Price window ending at the new current day.
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub executed: Action,
    /// Set when the requested action was infeasible and replaced by Hold.
    pub coerced: bool,
}

/// One line of an episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub price: f64,
    pub action_requested: Action,
    pub action_executed: Action,
    pub cash: f64,
    pub holdings: u32,
    pub net_worth: f64,
}

/// Apply one order at `price`. Infeasible orders become Hold.
pub(crate) fn execute(cfg: &EnvConfig, cash: f64, holdings: u32, price: f64, action: Action) -> (f64, u32, Action) {
    let lot = cfg.lot_size;
    let fee = cfg.transaction_cost;
    match action {
        Action::Buy => {
            let cost = price * lot as f64;
            if cash >= cost + fee && holdings + lot <= cfg.max_holdings {
                (cash - cost - fee, holdings + lot, Action::Buy)
            } else {
                (cash, holdings, Action::Hold)
            }
        }
        Action::Sell => {
            let proceeds = price * lot as f64;
            if holdings >= lot && cash + proceeds >= fee {
                (cash + proceeds - fee, holdings - lot, Action::Sell)
            } else {
                (cash, holdings, Action::Hold)
            }
        }
        Action::Hold => (cash, holdings, Action::Hold),
    }
}

/// Single-instrument market replay over a price array.
#[derive(Clone, Debug)]
pub struct TradingEnv {
    cfg: EnvConfig,
    prices: Vec<f64>,
    start: usize,
    state: PortfolioState,
    ledger: Ledger,
    done: bool,
}

impl TradingEnv {
    /// Start an episode whose first decision is taken on day `start`.
    /// Returns the environment and the first observation.
    pub fn reset(cfg: &EnvConfig, prices: &[f64], start: usize) -> Result<(TradingEnv, Vec<f64>)> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs));
        }
        if start < cfg.window_len {
            return Err(Error::InsufficientData(format!(
                "start day {start} leaves no room for a {}-day window",
                cfg.window_len
            )));
        }
        if start + cfg.horizon > prices.len() {
            return Err(Error::InsufficientData(format!(
                "episode [{start}, {}) runs past the {} available days",
                start + cfg.horizon,
                prices.len()
            )));
        }
        let env = TradingEnv {
            cfg: cfg.clone(),
            prices: prices.to_vec(),
            start,
            state: PortfolioState {
                cash: cfg.initial_cash,
                holdings: cfg.initial_holdings,
                initial_cash: cfg.initial_cash,
                t: 0,
            },
            ledger: Ledger::default(),
            done: false,
        };
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &PortfolioState {
        &self.state
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn start_day(&self) -> usize {
        self.start
    }

    /// Day index of the current decision (the last day once done).
    pub fn current_day(&self) -> usize {
        self.start + self.state.t.min(self.cfg.horizon - 1)
    }

    pub fn current_price(&self) -> f64 {
        self.prices[self.current_day()]
    }

    pub fn observation(&self) -> Vec<f64> {
        let day = self.current_day();
        self.prices[day + 1 - self.cfg.window_len..=day].to_vec()
    }

    pub fn net_worth(&self) -> f64 {
        net_worth(&self.state, self.current_price())
    }

    /// Agent-side query: budget and position value relative to initial cash.
    pub fn query(&self) -> AgentQuery {
        let scale = if self.state.initial_cash > 0.0 { self.state.initial_cash } else { 1.0 };
        AgentQuery {
            budget: self.state.cash / scale,
            holdings: self.state.holdings as f64 * self.current_price() / scale,
        }
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if !self.cfg.task.actions().contains(&action) {
            return Err(Error::InvalidAction(action.to_string()));
        }
        let price = self.current_price();
        let (cash, holdings, executed) = execute(&self.cfg, self.state.cash, self.state.holdings, price, action);
        let lot = self.cfg.lot_size;
        match executed {
            Action::Buy => {
                self.ledger.buy_costs += price * lot as f64;
                self.ledger.fees += self.cfg.transaction_cost;
                self.ledger.shares_bought += lot as u64;
            }
            Action::Sell => {
                self.ledger.sell_proceeds += price * lot as f64;
                self.ledger.fees += self.cfg.transaction_cost;
                self.ledger.shares_sold += lot as u64;
            }
            Action::Hold => {}
        }
        self.state.cash = cash;
        self.state.holdings = holdings;
        self.state.t += 1;
        self.done = self.state.t == self.cfg.horizon;
        let reward = if self.done {
            net_worth(&self.state, price) - self.state.initial_cash
        } else {
            0.0
        };
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            executed,
            coerced: executed != action,
        })
    }

    /// Log line describing the step just taken at `price`.
    pub fn record(&self, requested: Action, executed: Action, price: f64) -> StepRecord {
        StepRecord {
            t: self.state.t - 1,
            price,
            action_requested: requested,
            action_executed: executed,
            cash: self.state.cash,
            holdings: self.state.holdings,
            net_worth: net_worth(&self.state, price),
        }
    }
}
