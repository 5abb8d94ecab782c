use serde::Serialize;

use super::trading::execute;
use super::{Action, EnvConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSolution {
    /// Maximal terminal reward: final net worth minus initial cash.
    pub optimum: f64,
    /// One optimal action sequence (Hold preferred on ties).
    pub actions: Vec<Action>,
}

/// Exact optimum over all action sequences of an episode starting on day
/// `start`, by dynamic programming over (day, holdings).
///
/// For a fixed holding level, more cash never hurts: every order feasible with
/// less cash stays feasible and every later balance stays larger. Keeping only
/// the richest path into each (day, holdings) state is therefore exact.
pub fn oracle_profit(prices: &[f64], start: usize, cfg: &EnvConfig) -> Result<OracleSolution> {
    let horizon = cfg.horizon;
    if horizon == 0 || start + horizon > prices.len() {
        return Err(Error::InsufficientData(format!(
            "oracle episode [{start}, {}) exceeds {} days",
            start + horizon,
            prices.len()
        )));
    }
    let levels = cfg.max_holdings as usize + 1;
    let mut best: Vec<Option<f64>> = vec![None; levels];
    best[cfg.initial_holdings as usize] = Some(cfg.initial_cash);
    let mut back: Vec<Vec<(usize, Action)>> = Vec::with_capacity(horizon);

    // Hold first so that ties keep the passive choice.
    let order: Vec<Action> = [Action::Hold, Action::Sell, Action::Buy]
        .into_iter()
        .filter(|a| cfg.task.actions().contains(a))
        .collect();

    for day in start..start + horizon {
        let price = prices[day];
        let mut next: Vec<Option<f64>> = vec![None; levels];
        let mut from = vec![(usize::MAX, Action::Hold); levels];
        for (h, cash) in best.iter().enumerate() {
            let Some(cash) = *cash else { continue };
            for &a in &order {
                let (c2, h2, executed) = execute(cfg, cash, h as u32, price, a);
                if executed != a {
                    continue;
                }
                let h2 = h2 as usize;
                if next[h2].is_none_or(|c| c2 > c) {
                    next[h2] = Some(c2);
                    from[h2] = (h, a);
                }
            }
        }
        best = next;
        back.push(from);
    }

    let last_price = prices[start + horizon - 1];
    let (mut h, value) = best
        .iter()
        .enumerate()
        .filter_map(|(h, c)| c.map(|c| (h, c + h as f64 * last_price)))
        .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });

    let mut actions = vec![Action::Hold; horizon];
    for t in (0..horizon).rev() {
        let (prev, a) = back[t][h];
        actions[t] = a;
        h = prev;
    }
    Ok(OracleSolution {
        optimum: value - cfg.initial_cash,
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TradingEnv;

    fn cfg(horizon: usize) -> EnvConfig {
        EnvConfig {
            window_len: 1,
            horizon,
            ..EnvConfig::trading()
        }
    }

    #[test]
    fn constant_series_optimum_is_zero_with_all_hold() {
        let prices = vec![0.8; 12];
        let sol = oracle_profit(&prices, 1, &cfg(10)).unwrap();
        assert_eq!(sol.optimum, 0.0);
        assert!(sol.actions.iter().all(|a| *a == Action::Hold));
    }

    #[test]
    fn two_day_rise_by_hand() {
        let c = EnvConfig {
            transaction_cost: 0.0,
            initial_cash: 1.0,
            ..cfg(2)
        };
        let prices = [1.0, 1.0, 2.0];
        let sol = oracle_profit(&prices, 1, &c).unwrap();
        assert_eq!(sol.optimum, 1.0);
        assert_eq!(sol.actions[0], Action::Buy);
    }

    #[test]
    fn replaying_the_optimal_actions_attains_the_optimum() {
        let prices = [1.0, 1.0, 1.2, 0.9, 1.1, 1.05, 1.3];
        let c = cfg(6);
        let sol = oracle_profit(&prices, 1, &c).unwrap();
        let (mut env, _) = TradingEnv::reset(&c, &prices, 1).unwrap();
        let mut reward = 0.0;
        for a in &sol.actions {
            let r = env.step(*a).unwrap();
            assert!(!r.coerced);
            reward += r.reward;
        }
        assert_eq!(reward, sol.optimum);
        assert!(sol.optimum > 0.0);
    }
}
