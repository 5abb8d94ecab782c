//! Recurrent baseline: an LSTM run over the episode so far, with a linear
//! Q head on the final hidden state.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{concat_input, AgentQuery, ForwardOpts, HistoryView, ModelKind, QNetwork};
use crate::error::{Error, Result};
use crate::numerics::{add_outer, gaussian_init, matvec_add, matvec_t_add, sigmoid, ParamId, ParamStore};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_actions: usize,
    pub init_sigma: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            input_dim: 25,
            hidden: 50,
            num_actions: 3,
            init_sigma: 0.1,
        }
    }
}

const NAMES: [&str; 5] = ["Wx", "Wh", "b", "Wq", "bq"];
const WX: ParamId = ParamId(0);
const WH: ParamId = ParamId(1);
const B: ParamId = ParamId(2);
const WQ: ParamId = ParamId(3);
const BQ: ParamId = ParamId(4);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Values of one recurrence step kept for backpropagation.
#[derive(Clone, Debug)]
pub struct StepTrace {
    x: Vec<f64>,
    prev: LstmState,
    /// Gate activations `[i, f, o, g]`, each of length `hidden`.
    pub gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Lstm {
    cfg: LstmConfig,
}

/// Last state reached while acting, extended when the next query continues
/// the same episode.
#[derive(Debug, Default)]
pub struct LstmCache {
    last: Mutex<Option<(usize, Vec<AgentQuery>, LstmState)>>,
}

impl Lstm {
    pub fn new(cfg: LstmConfig) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.hidden == 0 || cfg.num_actions == 0 {
            return Err(Error::InvalidConfig(vec!["lstm dimensions must be at least 1".into()]));
        }
        Ok(Lstm { cfg })
    }

    fn shapes(&self) -> [Vec<usize>; 5] {
        let (i, h, a) = (self.cfg.input_dim + AgentQuery::DIM, self.cfg.hidden, self.cfg.num_actions);
        [vec![4 * h, i], vec![4 * h, h], vec![4 * h], vec![a, h], vec![a]]
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState {
            h: vec![0.0; self.cfg.hidden],
            c: vec![0.0; self.cfg.hidden],
        }
    }

    pub fn lstm_step(&self, store: &ParamStore, state: &LstmState, x: &[f64]) -> Result<(LstmState, StepTrace)> {
        if x.len() != self.cfg.input_dim + AgentQuery::DIM {
            return Err(Error::shape(format!("lstm input has dimension {}", x.len())));
        }
        let h = self.cfg.hidden;
        let mut z = store.value(B).data().to_vec();
        matvec_add(store.value(WX), x, &mut z);
        matvec_add(store.value(WH), &state.h, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if k < 3 * h { sigmoid(*v) } else { v.tanh() };
        }
        let (i, f, o, g) = (&z[..h], &z[h..2 * h], &z[2 * h..3 * h], &z[3 * h..]);
        let c: Vec<f64> = (0..h).map(|j| f[j] * state.c[j] + i[j] * g[j]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let hn = (0..h).map(|j| o[j] * tanh_c[j]).collect();
        let trace = StepTrace {
            x: x.to_vec(),
            prev: state.clone(),
            gates: z,
            tanh_c,
        };
        Ok((LstmState { h: hn, c }, trace))
    }

    pub fn lstm_q(&self, store: &ParamStore, state: &LstmState) -> Vec<f64> {
        let mut q = store.value(BQ).data().to_vec();
        matvec_add(store.value(WQ), &state.h, &mut q);
        q
    }

    /// Run over `inputs` from the zero state; returns Q and the step traces.
    pub fn unroll(&self, store: &ParamStore, inputs: &[Vec<f64>]) -> Result<(Vec<f64>, LstmState, Vec<StepTrace>)> {
        let mut state = self.zero_state();
        let mut traces = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (next, tr) = self.lstm_step(store, &state, x)?;
            traces.push(tr);
            state = next;
        }
        Ok((self.lstm_q(store, &state), state, traces))
    }

    /// Backpropagation through the whole unroll given `∂L/∂Q`.
    pub fn lstm_backward(&self, store: &mut ParamStore, final_state: &LstmState, traces: &[StepTrace], dq: &[f64]) -> Result<()> {
        let h = self.cfg.hidden;
        if dq.len() != self.cfg.num_actions || final_state.h.len() != h || traces.iter().any(|t| t.gates.len() != 4 * h) {
            return Err(Error::shape("lstm gradient shape mismatch"));
        }
        let (vals, mut grads) = store.split();
        add_outer(grads.get_mut(WQ), dq, &final_state.h);
        for (g, d) in grads.get_mut(BQ).data_mut().iter_mut().zip(dq) {
            *g += d;
        }
        let mut dh = vec![0.0; h];
        matvec_t_add(vals.get(WQ), dq, &mut dh);
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for tr in traces.iter().rev() {
            let z = &tr.gates;
            for j in 0..h {
                let (i, f, o, g) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                let tc = tr.tanh_c[j];
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                dz[j] = dcj * g * i * (1.0 - i);
                dz[h + j] = dcj * tr.prev.c[j] * f * (1.0 - f);
                dz[2 * h + j] = dh[j] * tc * o * (1.0 - o);
                dz[3 * h + j] = dcj * i * (1.0 - g * g);
                dc[j] = dcj * f;
            }
            add_outer(grads.get_mut(WX), &dz, &tr.x);
            add_outer(grads.get_mut(WH), &dz, &tr.prev.h);
            for (gb, d) in grads.get_mut(B).data_mut().iter_mut().zip(&dz) {
                *gb += d;
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(vals.get(WH), &dz, &mut dh);
        }
        Ok(())
    }

    fn inputs(view: &HistoryView<'_>, from: usize) -> Vec<Vec<f64>> {
        (from..=view.t)
            .map(|s| concat_input(&view.features[view.start_day + s], view.queries[s]))
            .collect()
    }
}

impl QNetwork for Lstm {
    type Cache = LstmCache;

    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
    }

    fn num_actions(&self) -> usize {
        self.cfg.num_actions
    }

    fn init_params(&self, rng: &mut Rng) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, shape) in NAMES.iter().zip(self.shapes()) {
            store.add(name, gaussian_init(&shape, 0.0, self.cfg.init_sigma, rng));
        }
        store
    }

    fn check_store(&self, store: &ParamStore) -> Result<()> {
        if store.len() != NAMES.len() {
            return Err(Error::Snapshot(format!("expected {} tensors, found {}", NAMES.len(), store.len())));
        }
        for (i, (name, shape)) in NAMES.iter().zip(self.shapes()).enumerate() {
            if store.require(name, &shape)?.index() != i {
                return Err(Error::Snapshot(format!("tensor {name} out of order")));
            }
        }
        Ok(())
    }

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "input_dim": self.cfg.input_dim,
            "hidden": self.cfg.hidden,
            "num_actions": self.cfg.num_actions,
        })
    }

    fn prepare(&self, _store: &ParamStore, _features: &[Vec<f64>], _rows: std::ops::Range<usize>) -> Result<LstmCache> {
        Ok(LstmCache::default())
    }

    fn q_values(&self, store: &ParamStore, cache: &LstmCache, view: &HistoryView<'_>, _opts: &mut ForwardOpts<'_>) -> Result<Vec<f64>> {
        let mut last = cache.last.lock().unwrap_or_else(|e| e.into_inner());
        let resume = match last.as_ref() {
            Some((start, qs, _)) if *start == view.start_day && qs.len() <= view.t && qs[..] == view.queries[..qs.len()] => qs.len(),
            _ => 0,
        };
        let mut state = match (resume, last.take()) {
            (0, _) | (_, None) => self.zero_state(),
            (_, Some((_, _, s))) => s,
        };
        for x in Self::inputs(view, resume) {
            state = self.lstm_step(store, &state, &x)?.0;
        }
        let q = self.lstm_q(store, &state);
        *last = Some((view.start_day, view.queries[..=view.t].to_vec(), state));
        Ok(q)
    }

    fn forward_backward(
        &self,
        store: &mut ParamStore,
        _cache: &mut LstmCache,
        view: &HistoryView<'_>,
        _opts: &mut ForwardOpts<'_>,
        dq: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>> {
        let (q, state, traces) = self.unroll(store, &Self::inputs(view, 0))?;
        let g = dq(&q);
        self.lstm_backward(store, &state, &traces, &g)?;
        Ok(q)
    }

    fn flush_grads(&self, _store: &mut ParamStore, _cache: &mut LstmCache, _features: &[Vec<f64>]) {}
}
