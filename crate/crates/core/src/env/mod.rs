//! Market-replay environment: price data, trading and optimized-execution
//! tasks, synthetic series with a controllable Markov order, and an exact
//! dynamic-programming profit oracle.

mod metrics;
mod oracle;
mod series;
mod synthetic;
mod trading;

pub use metrics::{net_worth, profitability_ratio};
pub use oracle::{oracle_profit, OracleSolution};
pub use series::{max_normalize, PriceSeries};
pub use synthetic::{directions, gen_synthetic, Direction};
pub use trading::{
    Action, EnvConfig, Ledger, PortfolioState, StepRecord, StepResult, Task, TradingEnv,
};
