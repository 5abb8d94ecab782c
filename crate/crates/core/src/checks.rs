//! Finite-difference gradient checks on tiny instances of every trainable
//! component.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::{example_loss, Encoder, WindowConfig};
use crate::error::{Error, Result};
use crate::model::{AgentQuery, Fcnn, FcnnConfig, ForwardOpts, GMemConfig, GMemNet, HistoryView, Lstm, LstmConfig, QNetwork};
use crate::numerics::{compare_grads, finite_diff_grad, ParamStore, TensorCheck};
use crate::rl::{td_backward, td_loss, TdSample};
use crate::rng::{stream, Rng};

const STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CheckTarget {
    Gmemn2n,
    Memn2n,
    Fcnn,
    Lstm,
    Encoder,
    /// Importance-weighted double-Q TD loss through a gated memory network.
    TdLoss,
}

impl CheckTarget {
    pub const ALL: [CheckTarget; 6] = [
        CheckTarget::Gmemn2n,
        CheckTarget::Memn2n,
        CheckTarget::Fcnn,
        CheckTarget::Lstm,
        CheckTarget::Encoder,
        CheckTarget::TdLoss,
    ];
}

/// Tiny memory network: d=4, three input dims, two hops, three actions.
pub fn tiny_gmem(gated: bool) -> GMemNet {
    GMemNet::new(GMemConfig {
        hops: 2,
        embed_dim: 4,
        input_dim: 3,
        num_actions: 3,
        max_mem: 8,
        gated,
        ..GMemConfig::default()
    })
    .expect("tiny config is valid")
}

/// Run the check for `target`. `corrupt` names a tensor whose analytic
/// gradient is perturbed before comparison, to exercise the failure path.
pub fn run_gradcheck(target: CheckTarget, seed: u64, corrupt: Option<&str>) -> Result<Vec<TensorCheck>> {
    let mut rng = stream(seed, "gradcheck");
    let (analytic, numeric) = match target {
        CheckTarget::Gmemn2n => model_grads(&tiny_gmem(true), 5, &mut rng)?,
        CheckTarget::Memn2n => model_grads(&tiny_gmem(false), 5, &mut rng)?,
        CheckTarget::Fcnn => model_grads(&Fcnn::new(FcnnConfig { input_dim: 3, hidden: 6, ..FcnnConfig::default() })?, 1, &mut rng)?,
        CheckTarget::Lstm => model_grads(&Lstm::new(LstmConfig { input_dim: 3, hidden: 4, num_actions: 3, init_sigma: 0.5 })?, 3, &mut rng)?,
        CheckTarget::Encoder => encoder_grads(&mut rng)?,
        CheckTarget::TdLoss => td_grads(&mut rng)?,
    };
    let mut analytic = analytic;
    if let Some(name) = corrupt {
        let id = analytic.id(name).ok_or_else(|| Error::InvalidConfig(vec![format!("no tensor named {name}")]))?;
        analytic.grad_mut(id).data_mut()[0] += 1e-2;
    }
    Ok(compare_grads(&analytic, &numeric))
}

fn uniform(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

fn random_history(rng: &mut Rng, days: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<AgentQuery>) {
    let features = (0..days).map(|_| uniform(rng, dim)).collect();
    let queries = (0..days)
        .map(|_| AgentQuery { budget: rng.random(), holdings: rng.random() })
        .collect();
    (features, queries)
}

/// Analytic and numeric gradients of `dq · Q(z_{1:days})`.
fn model_grads<N: QNetwork>(net: &N, days: usize, rng: &mut Rng) -> Result<(ParamStore, Vec<crate::numerics::Tensor>)> {
    let mut store = net.init_params(rng);
    // move biases off zero so no unit sits on a ReLU kink
    for id in store.ids().collect::<Vec<_>>() {
        if store.value(id).shape().len() == 1 {
            for v in store.value_mut(id).data_mut() {
                *v += 0.05;
            }
        }
    }
    let dim = net.header()["input_dim"].as_u64().unwrap_or(3) as usize;
    let (features, queries) = random_history(rng, days, dim);
    let view = HistoryView { features: &features, start_day: 0, t: days - 1, queries: &queries };
    let dq = uniform(rng, net.num_actions());
    let mut cache = net.prepare(&store, &features, 0..days)?;
    net.forward_backward(&mut store, &mut cache, &view, &mut ForwardOpts::default(), &mut |_| dq.clone())?;
    net.flush_grads(&mut store, &mut cache, &features);
    let numeric = finite_diff_grad(&store, STEP, |s| {
        let cache = net.prepare(s, &features, 0..days)?;
        let q = net.q_values(s, &cache, &view, &mut ForwardOpts::default())?;
        Ok(q.iter().zip(&dq).map(|(a, b)| a * b).sum())
    })?;
    Ok((store, numeric))
}

fn encoder_grads(rng: &mut Rng) -> Result<(ParamStore, Vec<crate::numerics::Tensor>)> {
    let window = WindowConfig { window_len: 3, ..WindowConfig::default() };
    let mut params = Encoder::init(window, 2, 0.5, rng).params;
    let (x, clean, next) = (uniform(rng, 3), uniform(rng, 3), uniform(rng, 3));
    example_loss(&mut params, &x, &clean, &next, 1.0, true);
    let numeric = finite_diff_grad(&params, STEP, |s| {
        let mut s = s.clone();
        Ok(example_loss(&mut s, &x, &clean, &next, 1.0, false))
    })?;
    Ok((params, numeric))
}

fn td_grads(rng: &mut Rng) -> Result<(ParamStore, Vec<crate::numerics::Tensor>)> {
    let net = tiny_gmem(true);
    let mut online = net.init_params(rng);
    let target = net.init_params(rng);
    let (features, queries) = random_history(rng, 6, 3);
    let view = |t| HistoryView { features: &features, start_day: 0, t, queries: &queries };
    let batch: Vec<TdSample<'_>> = (0..4)
        .map(|i| TdSample {
            state: view(i),
            next: if i == 3 { None } else { Some(view(i + 1)) },
            action: i % 3,
            reward: if i == 3 { 0.7 } else { 0.0 },
            weight: 0.4 + 0.2 * i as f64,
        })
        .collect();
    let noise_seed = Some(rng.random());
    let all = 0..features.len();
    let mut oc = net.prepare(&online, &features, all.clone())?;
    let tc = net.prepare(&target, &features, all)?;
    td_backward(&net, &mut online, &mut oc, &target, &tc, &features, &batch, 0.9, false, noise_seed)?;
    let numeric = finite_diff_grad(&online, STEP, |s| td_loss(&net, s, &target, &features, &batch, 0.9, false, noise_seed))?;
    Ok((online, numeric))
}
