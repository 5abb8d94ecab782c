use super::ParamStore;

/// Adam hyper-parameters. Defaults are the standard published constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update using the gradients currently stored.
/// Gradients are left in place; the caller zeroes them.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) {
    let t = store.bump_step() as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for p in store.params_mut() {
        let g = p.grad.data();
        let m = p.m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = p.v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        if cfg.lr == 0.0 {
            continue;
        }
        let (m, v) = (p.m.data(), p.v.data());
        for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

pub fn global_norm(store: &ParamStore) -> f64 {
    store.params().iter().map(|p| p.grad.sum_sq()).sum::<f64>().sqrt()
}

/// Rescale all gradients so their joint ℓ2 norm is at most `max_norm`.
/// Returns the factor applied (1 when nothing changed). Norms within one part
/// in 10¹² of the threshold count as on it, which makes clipping idempotent.
pub fn clip_by_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0);
    let g = global_norm(store);
    if g > max_norm * (1.0 + 1e-12) {
        let s = max_norm / g;
        store.params_mut().iter_mut().for_each(|p| p.grad.scale(s));
        s
    } else {
        1.0
    }
}
