use chrono::{Days, NaiveDate};
use rand::Rng as _;

use super::PriceSeries;
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
}

/// Parity rule: the next move is up iff the number of up-moves among the
/// last `k` moves is even.
fn next_direction(last: &[Direction]) -> Direction {
    let ups = last.iter().filter(|d| **d == Direction::Up).count();
    if ups % 2 == 0 {
        Direction::Up
    } else {
        Direction::Down
    }
}

/// Synthetic series of Markov order `order_k`.
///
/// Every move has magnitude `amplitude`; its sign follows the parity rule over
/// the previous `order_k` signs. The rule is started from an all-down history
/// and run for a seed-chosen number of burn-in steps, so the seed selects the
/// phase of the resulting cycle. The series is shifted so that its minimum
/// price is exactly 1.
pub fn gen_synthetic(order_k: usize, length: usize, amplitude: f64, seed: u64) -> PriceSeries {
    assert!(order_k >= 1, "order must be at least 1");
    assert!(amplitude > 0.0 && amplitude.is_finite());
    let mut rng = stream(seed, "synthetic/phase");
    let cycle_bound = (1usize << order_k.min(20)) + order_k;
    let burn_in = rng.random_range(0..cycle_bound);

    let mut hist = vec![Direction::Down; order_k];
    for _ in 0..burn_in {
        let d = next_direction(&hist[hist.len() - order_k..]);
        hist.push(d);
    }
    let mut levels = Vec::with_capacity(length);
    let mut level = 0.0;
    if length > 0 {
        levels.push(level);
    }
    for _ in 1..length {
        let d = next_direction(&hist[hist.len() - order_k..]);
        hist.push(d);
        level += match d {
            Direction::Up => amplitude,
            Direction::Down => -amplitude,
        };
        levels.push(level);
    }
    let min = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let opens = levels.iter().map(|l| l - min + 1.0).collect();
    let day0 = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let dates = (0..length)
        .map(|i| (day0 + Days::new(i as u64)).format("%Y-%m-%d").to_string())
        .collect();
    PriceSeries {
        name: format!("synth-k{order_k}-s{seed}"),
        dates,
        opens,
    }
}

/// Sign of each consecutive price move (flat moves count as down).
pub fn directions(prices: &[f64]) -> Vec<Direction> {
    prices
        .windows(2)
        .map(|w| if w[1] > w[0] { Direction::Up } else { Direction::Down })
        .collect()
}
