//! Memoryless baseline: two ReLU layers over the current encoded window and
//! the agent query.

use serde::{Deserialize, Serialize};

use super::{concat_input, AgentQuery, ForwardOpts, HistoryView, ModelKind, QNetwork};
use crate::error::{Error, Result};
use crate::numerics::{add_outer, gaussian_init, matvec_add, matvec_t_add, relu, ParamId, ParamStore};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcnnConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_actions: usize,
    pub init_sigma: f64,
}

impl Default for FcnnConfig {
    fn default() -> Self {
        FcnnConfig {
            input_dim: 25,
            hidden: 30,
            num_actions: 3,
            init_sigma: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fcnn {
    cfg: FcnnConfig,
    ids: [ParamId; 6],
}

const NAMES: [&str; 6] = ["W1", "b1", "W2", "b2", "W3", "b3"];

/// Activations of one pass.
#[derive(Clone, Debug)]
pub struct FcnnTrace {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub q: Vec<f64>,
}

impl Fcnn {
    pub fn new(cfg: FcnnConfig) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.hidden == 0 || cfg.num_actions == 0 {
            return Err(Error::InvalidConfig(vec!["fcnn dimensions must be at least 1".into()]));
        }
        Ok(Fcnn {
            cfg,
            ids: std::array::from_fn(ParamId),
        })
    }

    fn shapes(&self) -> [Vec<usize>; 6] {
        let (i, h, a) = (self.cfg.input_dim + AgentQuery::DIM, self.cfg.hidden, self.cfg.num_actions);
        [vec![h, i], vec![h], vec![h, h], vec![h], vec![a, h], vec![a]]
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<FcnnTrace> {
        if x.len() != self.cfg.input_dim + AgentQuery::DIM {
            return Err(Error::shape(format!("fcnn input has dimension {}", x.len())));
        }
        let layer = |w: usize, b: usize, input: &[f64], act: bool| {
            let mut out = store.value(self.ids[b]).data().to_vec();
            matvec_add(store.value(self.ids[w]), input, &mut out);
            if act {
                out.iter_mut().for_each(|v| *v = relu(*v));
            }
            out
        };
        let h1 = layer(0, 1, x, true);
        let h2 = layer(2, 3, &h1, true);
        let q = layer(4, 5, &h2, false);
        Ok(FcnnTrace { x: x.to_vec(), h1, h2, q })
    }

    pub fn backward(&self, store: &mut ParamStore, trace: &FcnnTrace, dq: &[f64]) -> Result<()> {
        if dq.len() != self.cfg.num_actions || trace.h1.len() != self.cfg.hidden {
            return Err(Error::shape("fcnn gradient shape mismatch"));
        }
        let (vals, mut grads) = store.split();
        let mut back = |w: usize, b: usize, input: &[f64], dout: &[f64]| -> Vec<f64> {
            add_outer(grads.get_mut(self.ids[w]), dout, input);
            for (g, d) in grads.get_mut(self.ids[b]).data_mut().iter_mut().zip(dout) {
                *g += d;
            }
            let mut din = vec![0.0; input.len()];
            matvec_t_add(vals.get(self.ids[w]), dout, &mut din);
            din
        };
        let mask = |d: Vec<f64>, h: &[f64]| -> Vec<f64> { d.into_iter().zip(h).map(|(g, &a)| if a > 0.0 { g } else { 0.0 }).collect() };
        let dh2 = mask(back(4, 5, &trace.h2, dq), &trace.h2);
        let dh1 = mask(back(2, 3, &trace.h1, &dh2), &trace.h1);
        back(0, 1, &trace.x, &dh1);
        Ok(())
    }
}

impl QNetwork for Fcnn {
    type Cache = ();

    fn kind(&self) -> ModelKind {
        ModelKind::Fcnn
    }

    fn num_actions(&self) -> usize {
        self.cfg.num_actions
    }

    fn init_params(&self, rng: &mut Rng) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, shape) in NAMES.iter().zip(self.shapes()) {
            let sigma = if name.starts_with('b') { 0.0 } else { self.cfg.init_sigma };
            store.add(name, gaussian_init(&shape, 0.0, sigma, rng));
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

    fn prepare(&self, _store: &ParamStore, _features: &[Vec<f64>], _rows: std::ops::Range<usize>) -> Result<()> {
        Ok(())
    }

    fn q_values(&self, store: &ParamStore, _cache: &(), view: &HistoryView<'_>, _opts: &mut ForwardOpts<'_>) -> Result<Vec<f64>> {
        let x = concat_input(&view.features[view.current_day()], view.query());
        Ok(self.forward(store, &x)?.q)
    }

    fn forward_backward(
        &self,
        store: &mut ParamStore,
        _cache: &mut (),
        view: &HistoryView<'_>,
        _opts: &mut ForwardOpts<'_>,
        dq: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>> {
        let x = concat_input(&view.features[view.current_day()], view.query());
        let trace = self.forward(store, &x)?;
        let g = dq(&trace.q);
        self.backward(store, &trace, &g)?;
        Ok(trace.q)
    }

    fn flush_grads(&self, _store: &mut ParamStore, _cache: &mut (), _features: &[Vec<f64>]) {}
}
