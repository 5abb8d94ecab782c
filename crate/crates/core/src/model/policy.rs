use rand::Rng as _;

use crate::rng::Rng;

/// Index of the largest value (first on ties).
pub fn argmax(q: &[f64]) -> usize {
    q.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Boltzmann policy: sample an action from `softmax(q / temperature)`.
///
/// `temperature == 0` is the greedy limit: mass is split evenly over the
/// maximal entries.
pub fn boltzmann(q: &[f64], temperature: f64, rng: &mut Rng) -> (usize, Vec<f64>) {
    assert!(!q.is_empty());
    assert!(temperature >= 0.0, "temperature must be non-negative");
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = if temperature == 0.0 {
        q.iter().map(|&v| if v == max { 1.0 } else { 0.0 }).collect()
    } else {
        q.iter().map(|&v| ((v - max) / temperature).exp()).collect()
    };
    let total: f64 = weights.iter().sum();
    let dist: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pick = dist.len() - 1;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc && *p > 0.0 {
            pick = i;
            break;
        }
    }
    if dist[pick] == 0.0 {
        pick = argmax(&dist);
    }
    (pick, dist)
}
