//! Prioritized experience replay backed by a sum tree.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Binary tree whose internal nodes hold the sum of their children.
#[derive(Clone, Debug)]
pub struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1).next_power_of_two();
        SumTree {
            capacity,
            nodes: vec![0.0; 2 * capacity],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.capacity + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut n = self.capacity + i;
        self.nodes[n] = value;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`, for `0 <= mass < total`.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut n = 1;
        while n < self.capacity {
            let left = self.nodes[2 * n];
            if mass < left || self.nodes[2 * n + 1] <= 0.0 {
                n *= 2;
            } else {
                mass -= left;
                n = 2 * n + 1;
            }
        }
        n - self.capacity
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerConfig {
    pub capacity: usize,
    pub alpha: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    /// Importance weights `(N P(i))^-β`, divided by the batch maximum.
    pub weights: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Ring buffer of items with priority-proportional sampling.
#[derive(Clone, Debug)]
pub struct PrioritizedBuffer<T> {
    cfg: PerConfig,
    items: Vec<T>,
    priorities: Vec<f64>,
    tree: SumTree,
    next: usize,
    max_priority: f64,
}

impl<T> PrioritizedBuffer<T> {
    pub fn new(cfg: PerConfig) -> Self {
        PrioritizedBuffer {
            items: Vec::with_capacity(cfg.capacity.min(1 << 16)),
            priorities: Vec::new(),
            tree: SumTree::new(cfg.capacity),
            next: 0,
            max_priority: 1.0,
            cfg,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.priorities[i]
    }

    /// Probability that one draw returns entry `i`.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    /// Insert with the largest priority seen so far, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) {
        let p = self.max_priority;
        if self.items.len() < self.cfg.capacity {
            self.items.push(item);
            self.priorities.push(p);
        } else {
            self.items[self.next] = item;
            self.priorities[self.next] = p;
        }
        self.tree.set(self.next, p.powf(self.cfg.alpha));
        self.next = (self.next + 1) % self.cfg.capacity;
    }

    pub fn set_priority(&mut self, i: usize, p: f64) {
        assert!(p > 0.0 && p.is_finite(), "priority must be positive and finite");
        self.priorities[i] = p;
        self.max_priority = self.max_priority.max(p);
        self.tree.set(i, p.powf(self.cfg.alpha));
    }

    /// Set the priorities of sampled entries from their TD errors.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&i, &d) in indices.iter().zip(td_errors) {
            self.set_priority(i, d.abs() + self.cfg.eps);
        }
    }

    /// One index drawn with probability proportional to `priority^α`.
    pub fn draw(&self, rng: &mut Rng) -> usize {
        assert!(!self.items.is_empty(), "draw from an empty buffer");
        self.tree.find(rng.random::<f64>() * self.tree.total()).min(self.items.len() - 1)
    }

    /// Draw `batch` entries independently with probability proportional to `priority^α`.
    pub fn sample(&self, batch: usize, beta: f64, rng: &mut Rng) -> Result<SampledBatch> {
        let n = self.items.len();
        if n < batch || batch == 0 {
            return Err(Error::InsufficientData(format!("replay buffer holds {n} entries, batch needs {batch}")));
        }
        let indices: Vec<usize> = (0..batch).map(|_| self.draw(rng)).collect();
        let probs: Vec<f64> = indices.iter().map(|&i| self.probability(i)).collect();
        let raw: Vec<f64> = probs.iter().map(|p| (n as f64 * p).powf(-beta)).collect();
        let max = raw.iter().cloned().fold(f64::MIN, f64::max);
        let weights = raw.iter().map(|w| w / max).collect();
        Ok(SampledBatch { indices, weights, probs })
    }
}
