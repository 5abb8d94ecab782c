mod common;

use common::{brute_force_optimum, grid_prices, play, random_actions, reconstruct, rng, task_config};
use memtrader::env::{
    directions, gen_synthetic, max_normalize, net_worth, oracle_profit, Action, Direction, EnvConfig, PriceSeries, Task,
    TradingEnv,
};
use proptest::prelude::*;
use rand::Rng as _;

fn any_task() -> impl Strategy<Value = Task> {
    prop_oneof![Just(Task::Trading), Just(Task::ExecSell)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ledger_balances_exactly_on_grid_prices(seed in any::<u64>(), task in any_task(), horizon in 1usize..40) {
        let mut r = rng(seed);
        let cfg = task_config(task, horizon);
        let prices = grid_prices(&mut r, horizon + 1);
        let actions = random_actions(&mut r, task, horizon);
        let (mut env, _) = TradingEnv::reset(&cfg, &prices, 1).unwrap();
        for a in actions {
            env.step(a).unwrap();
            let (s, l) = (env.state(), env.ledger());
            prop_assert_eq!(s.cash + l.buy_costs - l.sell_proceeds + l.fees, cfg.initial_cash);
            prop_assert_eq!(s.holdings as u64, cfg.initial_holdings as u64 + l.shares_bought - l.shares_sold);
            prop_assert!(s.cash >= 0.0);
        }
    }

    #[test]
    fn cash_is_the_replayed_ledger_on_any_prices(seed in any::<u64>(), task in any_task(), horizon in 1usize..40) {
        let mut r = rng(seed);
        let cfg = EnvConfig { transaction_cost: 0.001, ..task_config(task, horizon) };
        let prices: Vec<f64> = (0..=horizon).map(|_| r.random_range(0.2..3.0)).collect();
        let mut executed = Vec::new();
        let (mut env, _) = TradingEnv::reset(&cfg, &prices, 1).unwrap();
        for a in random_actions(&mut r, task, horizon) {
            executed.push(env.step(a).unwrap().executed);
        }
        let (cash, holdings) = reconstruct(&cfg, &prices, 1, &executed);
        prop_assert_eq!(env.state().cash.to_bits(), cash.to_bits());
        prop_assert_eq!(env.state().holdings, holdings);
    }

    #[test]
    fn reward_is_terminal_only(seed in any::<u64>(), task in any_task(), horizon in 1usize..30) {
        let mut r = rng(seed);
        let cfg = task_config(task, horizon);
        let prices = grid_prices(&mut r, horizon + 1);
        let (env, rewards) = play(&cfg, &prices, 1, &random_actions(&mut r, task, horizon));
        prop_assert!(rewards[..horizon - 1].iter().all(|&x| x == 0.0));
        let last = prices[horizon];
        prop_assert_eq!(rewards[horizon - 1], net_worth(env.state(), last) - cfg.initial_cash);
        prop_assert!(env.is_done());
    }

    #[test]
    fn oracle_bounds_every_sequence_and_replays(seed in any::<u64>(), task in any_task(), horizon in 1usize..25) {
        let mut r = rng(seed);
        let cfg = task_config(task, horizon);
        let prices = grid_prices(&mut r, horizon + 1);
        let sol = oracle_profit(&prices, 1, &cfg).unwrap();
        let (_, replay) = play(&cfg, &prices, 1, &sol.actions);
        prop_assert_eq!(*replay.last().unwrap(), sol.optimum);
        for _ in 0..20 {
            let (_, rewards) = play(&cfg, &prices, 1, &random_actions(&mut r, task, horizon));
            prop_assert!(*rewards.last().unwrap() <= sol.optimum);
        }
    }

    #[test]
    fn oracle_matches_enumeration(seed in any::<u64>(), task in any_task(), horizon in 1usize..7) {
        let mut r = rng(seed);
        let cfg = EnvConfig { max_holdings: 2, initial_holdings: 0, initial_cash: 4.0, ..task_config(task, horizon) };
        let cfg = if task == Task::ExecSell { EnvConfig { initial_holdings: 2, ..cfg } } else { cfg };
        let prices = grid_prices(&mut r, horizon + 1);
        prop_assert_eq!(oracle_profit(&prices, 1, &cfg).unwrap().optimum, brute_force_optimum(&cfg, &prices, 1));
    }

    #[test]
    fn csv_round_trips(prices in prop::collection::vec(1e-3f64..1e4, 1..50)) {
        let dates = (0..prices.len()).map(|i| format!("2001-{:02}-{:02}", i / 28 + 1, i % 28 + 1)).collect();
        let series = PriceSeries::new("s", dates, prices).unwrap();
        let mut buf = Vec::new();
        series.write_csv_to(&mut buf).unwrap();
        let back = PriceSeries::read_csv(buf.as_slice(), "s", "mem").unwrap();
        prop_assert_eq!(back, series);
    }

    #[test]
    fn normalized_series_peaks_at_one(prices in prop::collection::vec(1e-3f64..1e4, 1..50)) {
        let dates = vec!["2001-01-01".to_string(); prices.len()];
        let norm = max_normalize(&PriceSeries::new("s", dates, prices).unwrap());
        prop_assert_eq!(norm.opens.iter().copied().fold(f64::MIN, f64::max), 1.0);
        prop_assert!(norm.opens.iter().all(|&p| p > 0.0 && p <= 1.0));
    }
}

#[test]
fn coerced_orders_change_nothing() {
    let cfg = EnvConfig { initial_cash: 1.0, max_holdings: 1, ..task_config(Task::Trading, 4) };
    let prices = [0.0, 0.75, 0.5, 2.0, 1.0];
    let (mut env, _) = TradingEnv::reset(&cfg, &prices, 1).unwrap();
    // sell with nothing held
    let r = env.step(Action::Sell).unwrap();
    assert!(r.coerced && r.executed == Action::Hold);
    assert_eq!(env.ledger().fees, 0.0);
    env.step(Action::Buy).unwrap();
    // buy above the position cap
    let before = env.state().clone();
    let r = env.step(Action::Buy).unwrap();
    assert!(r.coerced);
    assert_eq!((env.state().cash, env.state().holdings), (before.cash, before.holdings));
    assert_eq!(env.ledger().shares_bought, 1);
}

#[test]
fn unaffordable_buy_is_coerced() {
    let cfg = EnvConfig { initial_cash: 0.5, ..task_config(Task::Trading, 1) };
    let (_, rewards) = play(&cfg, &[0.0, 0.5], 1, &[Action::Buy]);
    assert_eq!(rewards, vec![0.0]);
}

#[test]
fn exec_sell_rejects_buy() {
    let cfg = task_config(Task::ExecSell, 2);
    let (mut env, _) = TradingEnv::reset(&cfg, &[1.0, 1.0, 1.0], 1).unwrap();
    assert!(env.step(Action::Buy).is_err());
}

#[test]
fn stepping_past_the_horizon_fails() {
    let cfg = task_config(Task::Trading, 1);
    let (mut env, _) = TradingEnv::reset(&cfg, &[1.0, 1.0], 1).unwrap();
    env.step(Action::Hold).unwrap();
    assert!(env.step(Action::Hold).is_err());
}

#[test]
fn flat_prices_have_nothing_to_win() {
    for task in [Task::Trading, Task::ExecSell] {
        let cfg = task_config(task, 12);
        let sol = oracle_profit(&[1.0; 13], 1, &cfg).unwrap();
        // reward counts the initial position at its final price
        assert_eq!(sol.optimum, cfg.initial_holdings as f64);
        assert!(sol.actions.iter().all(|&a| a == Action::Hold));
    }
}

/// With k moves of context the next direction is a function; the parity rule
/// makes it a function of exactly the last k.
#[test]
fn synthetic_series_have_the_requested_order() {
    for k in 1..=4 {
        for seed in 0..5 {
            let s = gen_synthetic(k, 400, 0.01, seed);
            assert_eq!(s.opens.iter().copied().fold(f64::MAX, f64::min), 1.0);
            let dirs = directions(&s.opens);
            for i in k..dirs.len() {
                let ups = dirs[i - k..i].iter().filter(|d| **d == Direction::Up).count();
                let expect = if ups % 2 == 0 { Direction::Up } else { Direction::Down };
                assert_eq!(dirs[i], expect, "k={k} seed={seed} i={i}");
            }
        }
    }
}

#[test]
fn synthetic_is_seeded() {
    assert_eq!(gen_synthetic(3, 50, 0.01, 9), gen_synthetic(3, 50, 0.01, 9));
    let phases: std::collections::HashSet<Vec<u64>> =
        (0..20).map(|s| gen_synthetic(3, 30, 0.01, s).opens.iter().map(|p| p.to_bits()).collect()).collect();
    assert!(phases.len() > 1);
}
