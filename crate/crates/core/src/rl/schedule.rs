//! Step-indexed schedules for the learning rate, linear start, exploration
//! temperature and importance exponent.

use serde::{Deserialize, Serialize};

/// Learning rate halved every `period` updates, with no halving past `stop`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub period: u64,
    pub stop: u64,
}

impl LrSchedule {
    /// Number of halvings applied once `updates` updates have been performed.
    pub fn halvings(&self, updates: u64) -> u32 {
        if self.period == 0 {
            return 0;
        }
        (updates.min(self.stop) / self.period) as u32
    }

    pub fn lr(&self, updates: u64) -> f64 {
        self.base * 0.5f64.powi(self.halvings(updates) as i32)
    }
}

/// Linear interpolation from `start` to `end` as `progress` goes from 0 to 1.
pub fn linear(start: f64, end: f64, progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    start * (1.0 - p) + end * p
}

/// Fraction of a run of `total` items completed before item `i`.
pub fn progress(i: usize, total: usize) -> f64 {
    if total <= 1 {
        0.0
    } else {
        i as f64 / (total - 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_at_period_boundaries_until_stop() {
        let s = LrSchedule { base: 1e-3, period: 3000, stop: 10_000 };
        assert_eq!(s.lr(0), 1e-3);
        assert_eq!(s.lr(2999), 1e-3);
        assert_eq!(s.lr(3000), 5e-4);
        assert_eq!(s.lr(6000), 2.5e-4);
        assert_eq!(s.lr(9000), 1.25e-4);
        assert_eq!(s.lr(12_000), 1.25e-4);
        assert_eq!(s.lr(1_000_000), 1.25e-4);
    }

    #[test]
    fn linear_interpolation() {
        assert_eq!(linear(1.0, 0.1, 0.0), 1.0);
        assert_eq!(linear(1.0, 0.1, 1.0), 0.1);
        assert_eq!(linear(0.4, 1.0, 0.5), 0.7);
        assert_eq!(progress(0, 1), 0.0);
        assert_eq!(progress(9, 10), 1.0);
    }
}
