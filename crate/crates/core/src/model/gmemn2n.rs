//! Gated end-to-end memory network producing one Q-value per action.
//!
//! Memory slot `i` holds an encoded window `Φ(x_i)`. Each hop `k` embeds the
//! slots as `m_i = A^k Φ(x_i) + TA^k[pos_i]` and `c_i = C^k Φ(x_i) + TC^k[pos_i]`,
//! attends with `p = softmax(uᵀ m)`, reads `o = Σ p_i c_i` and updates the
//! controller through a transform gate:
//!
//! ```text
//! T     = σ(W_T^k u + b_T^k)
//! u'    = o ⊙ T + u ⊙ (1 − T)
//! ```
//!
//! The controller starts at `u = B q` for the agent query `q` and the head is
//! linear, `Q = W u^{K+1}`. Positions count from the most recent slot, so the
//! temporal rows encode recency. With adjacent tying `A^{k+1}` and `C^k` are one
//! tensor; `B` shares storage with `A^1` only when the query and slot
//! dimensions agree.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{AgentQuery, ForwardOpts, HistoryView, ModelKind, QNetwork};
use crate::error::{Error, Result};
use crate::numerics::{
    add_outer, dot, gaussian_init, matvec, matvec_t_add, order_free_sum, sigmoid, softmax_unchecked, ParamId, ParamStore, Tensor,
};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GMemConfig {
    pub hops: usize,
    pub embed_dim: usize,
    /// Dimension of the encoded windows stored in memory.
    pub input_dim: usize,
    pub query_dim: usize,
    pub num_actions: usize,
    /// Number of temporal-encoding rows.
    pub max_mem: usize,
    /// Keep only the most recent slots; `None` keeps the whole episode.
    pub memory_size: Option<usize>,
    pub adjacent_tying: bool,
    /// `false` gives the ungated residual update `u' = o + u`.
    pub gated: bool,
    /// Probability of inserting an empty slot after each slot during training.
    pub noise_rate: f64,
    pub init_sigma: f64,
    pub gate_bias_mean: f64,
}

impl Default for GMemConfig {
    fn default() -> Self {
        GMemConfig {
            hops: 3,
            embed_dim: 20,
            input_dim: 25,
            query_dim: AgentQuery::DIM,
            num_actions: 3,
            max_mem: 256,
            memory_size: None,
            adjacent_tying: true,
            gated: true,
            noise_rate: 0.1,
            init_sigma: 0.1,
            gate_bias_mean: 0.2,
        }
    }
}

impl GMemConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let positive = [
            ("hops", self.hops),
            ("embed_dim", self.embed_dim),
            ("input_dim", self.input_dim),
            ("query_dim", self.query_dim),
            ("num_actions", self.num_actions),
            ("max_mem", self.max_mem),
        ];
        for (name, v) in positive {
            if v == 0 {
                errs.push(format!("model.{name} must be at least 1"));
            }
        }
        if self.memory_size == Some(0) {
            errs.push("model.memory_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            errs.push("model.noise_rate must lie in [0, 1)".into());
        }
        if !(self.init_sigma >= 0.0) {
            errs.push("model.init_sigma must be non-negative".into());
        }
        errs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum QueryEmbedding {
    Own(ParamId),
    /// Index into the embedding storages.
    Shared(usize),
}

/// One entry of the expanded, recency-ordered memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    /// Row of the projection table, `None` for an inserted empty slot.
    pub row: Option<usize>,
    /// Temporal-encoding row.
    pub pos: usize,
}

#[derive(Clone, Debug)]
struct HopTrace {
    u: Vec<f64>,
    m: Vec<f64>,
    c: Vec<f64>,
    p: Vec<f64>,
    o: Vec<f64>,
    gate: Option<Vec<f64>>,
}

/// Intermediate values of a forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    slots: Vec<Slot>,
    query: Vec<f64>,
    linear_start: bool,
    hops: Vec<HopTrace>,
    u_final: Vec<f64>,
    q: Vec<f64>,
    /// Slot payloads, present when the trace came from [`GMemNet::forward`].
    payloads: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn controller_states(&self) -> Vec<&[f64]> {
        self.hops.iter().map(|h| h.u.as_slice()).chain(std::iter::once(self.u_final.as_slice())).collect()
    }

    pub fn attention(&self) -> Vec<&[f64]> {
        self.hops.iter().map(|h| h.p.as_slice()).collect()
    }

    pub fn reads(&self) -> Vec<&[f64]> {
        self.hops.iter().map(|h| h.o.as_slice()).collect()
    }

    pub fn gates(&self) -> Vec<&[f64]> {
        self.hops.iter().filter_map(|h| h.gate.as_deref()).collect()
    }
}

/// Ordered memory of encoded windows with their time indices.
#[derive(Clone, Debug)]
pub struct MemoryBank<'a> {
    payloads: Vec<&'a [f64]>,
    times: Vec<usize>,
}

impl<'a> MemoryBank<'a> {
    pub fn new(payloads: Vec<&'a [f64]>, times: Vec<usize>) -> Result<Self> {
        if payloads.len() != times.len() {
            return Err(Error::shape("memory bank payload/time count mismatch"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::shape("memory positions must be strictly increasing"));
        }
        Ok(MemoryBank { payloads, times })
    }

    /// Consecutive slots at times `0..n`.
    pub fn from_slots(payloads: &'a [Vec<f64>]) -> Self {
        MemoryBank {
            payloads: payloads.iter().map(Vec::as_slice).collect(),
            times: (0..payloads.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }
}

/// Embedded memories of one hop, in recency order.
#[derive(Clone, Debug)]
pub struct EmbeddedMemories {
    pub slots: Vec<Slot>,
    pub m: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

/// Projections `E Φ(x_r)` for every embedding storage `E` and table row `r`.
#[derive(Clone, Debug)]
pub struct ProjTable {
    d: usize,
    rows: usize,
    data: Vec<Vec<f64>>,
}

impl ProjTable {
    fn zeros(storages: usize, rows: usize, d: usize) -> Self {
        ProjTable {
            d,
            rows,
            data: vec![vec![0.0; rows * d]; storages],
        }
    }

    fn row(&self, storage: usize, r: usize) -> &[f64] {
        &self.data[storage][r * self.d..(r + 1) * self.d]
    }

    fn row_mut(&mut self, storage: usize, r: usize) -> &mut [f64] {
        &mut self.data[storage][r * self.d..(r + 1) * self.d]
    }

    fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| v.iter_mut().for_each(|x| *x = 0.0));
    }
}

/// Projection values plus a matching gradient accumulator.
#[derive(Clone, Debug)]
pub struct GMemCache {
    proj: ProjTable,
    grad: ProjTable,
    row_range: std::ops::Range<usize>,
    dirty: bool,
}

#[derive(Clone, Debug)]
pub struct GMemNet {
    cfg: GMemConfig,
    layout: Vec<(String, Vec<usize>)>,
    emb: Vec<ParamId>,
    a_of: Vec<usize>,
    c_of: Vec<usize>,
    b: QueryEmbedding,
    ta: Vec<ParamId>,
    tc: Vec<ParamId>,
    wt: Vec<ParamId>,
    bt: Vec<ParamId>,
    w: ParamId,
}

impl GMemNet {
    pub fn new(cfg: GMemConfig) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs));
        }
        let (k, d) = (cfg.hops, cfg.embed_dim);
        let mut layout: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| {
            layout.push((name, shape));
            ParamId(layout.len() - 1)
        };
        let (emb, a_of, c_of) = if cfg.adjacent_tying {
            let emb: Vec<ParamId> = (0..=k).map(|s| push(format!("emb{s}"), vec![d, cfg.input_dim])).collect();
            (emb, (0..k).collect::<Vec<_>>(), (1..=k).collect::<Vec<_>>())
        } else {
            let a: Vec<ParamId> = (1..=k).map(|h| push(format!("A{h}"), vec![d, cfg.input_dim])).collect();
            let c: Vec<ParamId> = (1..=k).map(|h| push(format!("C{h}"), vec![d, cfg.input_dim])).collect();
            let emb = a.into_iter().chain(c).collect();
            (emb, (0..k).collect(), (k..2 * k).collect())
        };
        let b = if cfg.adjacent_tying && cfg.query_dim == cfg.input_dim {
            QueryEmbedding::Shared(a_of[0])
        } else {
            QueryEmbedding::Own(push("B".into(), vec![d, cfg.query_dim]))
        };
        let ta = (1..=k).map(|h| push(format!("TA{h}"), vec![cfg.max_mem, d])).collect();
        let tc = (1..=k).map(|h| push(format!("TC{h}"), vec![cfg.max_mem, d])).collect();
        let (wt, bt) = if cfg.gated {
            let wt = (1..=k).map(|h| push(format!("WT{h}"), vec![d, d])).collect();
            let bt = (1..=k).map(|h| push(format!("bT{h}"), vec![d])).collect();
            (wt, bt)
        } else {
            (Vec::new(), Vec::new())
        };
        let w = push("W".into(), vec![cfg.num_actions, d]);
        Ok(GMemNet {
            cfg,
            layout,
            emb,
            a_of,
            c_of,
            b,
            ta,
            tc,
            wt,
            bt,
            w,
        })
    }

    pub fn config(&self) -> &GMemConfig {
        &self.cfg
    }

    /// Name of the tensor backing `A^hop` (1-based hop).
    pub fn a_name(&self, hop: usize) -> &str {
        &self.layout[self.emb[self.a_of[hop - 1]].0].0
    }

    /// Name of the tensor backing `C^hop` (1-based hop).
    pub fn c_name(&self, hop: usize) -> &str {
        &self.layout[self.emb[self.c_of[hop - 1]].0].0
    }

    pub fn b_name(&self) -> &str {
        match self.b {
            QueryEmbedding::Own(id) => &self.layout[id.0].0,
            QueryEmbedding::Shared(s) => &self.layout[self.emb[s].0].0,
        }
    }

    fn b_matrix<'s>(&self, store: &'s ParamStore) -> &'s Tensor {
        match self.b {
            QueryEmbedding::Own(id) => store.value(id),
            QueryEmbedding::Shared(s) => store.value(self.emb[s]),
        }
    }

    fn project_rows(&self, store: &ParamStore, payloads: &[&[f64]], rows: std::ops::Range<usize>, total_rows: usize) -> Result<ProjTable> {
        let d = self.cfg.embed_dim;
        let mut table = ProjTable::zeros(self.emb.len(), total_rows, d);
        for r in rows {
            let x = payloads[r];
            if x.is_empty() {
                continue;
            }
            if x.len() != self.cfg.input_dim {
                return Err(Error::shape(format!(
                    "memory payload has dimension {}, expected {}",
                    x.len(),
                    self.cfg.input_dim
                )));
            }
            for (s, &id) in self.emb.iter().enumerate() {
                matvec(store.value(id), x, table.row_mut(s, r));
            }
        }
        Ok(table)
    }

    /// Recency-ordered slot list; with a noise source, empty slots are
    /// inserted after each slot with probability `noise_rate`.
    fn layout_slots(&self, chronological_rows: &[usize], noise: Option<&mut Rng>) -> Result<Vec<Slot>> {
        let mut slots = Vec::with_capacity(chronological_rows.len() + 4);
        let mut noise = noise;
        let push = |slots: &mut Vec<Slot>, row: Option<usize>| -> Result<()> {
            let pos = slots.len();
            if pos >= self.cfg.max_mem {
                return Err(Error::MemoryCapacity {
                    pos,
                    max_mem: self.cfg.max_mem,
                });
            }
            slots.push(Slot { row, pos });
            Ok(())
        };
        for (i, &r) in chronological_rows.iter().rev().enumerate() {
            push(&mut slots, Some(r))?;
            let remaining = chronological_rows.len() - 1 - i;
            if let Some(rng) = noise.as_deref_mut() {
                // drawn even when there is no room, so the noise stream stays aligned
                if rng.random::<f64>() < self.cfg.noise_rate && slots.len() + remaining < self.cfg.max_mem {
                    push(&mut slots, None)?;
                }
            }
        }
        Ok(slots)
    }

    fn embed_hop(&self, store: &ParamStore, proj: &ProjTable, slots: &[Slot], hop: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.cfg.embed_dim;
        let (ta, tc) = (store.value(self.ta[hop]), store.value(self.tc[hop]));
        let mut m = vec![0.0; slots.len() * d];
        let mut c = vec![0.0; slots.len() * d];
        for (j, slot) in slots.iter().enumerate() {
            let mj = &mut m[j * d..(j + 1) * d];
            let cj = &mut c[j * d..(j + 1) * d];
            mj.copy_from_slice(ta.row(slot.pos));
            cj.copy_from_slice(tc.row(slot.pos));
            if let Some(r) = slot.row {
                for (x, y) in mj.iter_mut().zip(proj.row(self.a_of[hop], r)) {
                    *x += y;
                }
                for (x, y) in cj.iter_mut().zip(proj.row(self.c_of[hop], r)) {
                    *x += y;
                }
            }
        }
        (m, c)
    }

    fn forward_core(
        &self,
        store: &ParamStore,
        proj: &ProjTable,
        rows: &[usize],
        query: &[f64],
        opts: &mut ForwardOpts<'_>,
    ) -> Result<ForwardTrace> {
        if rows.is_empty() {
            return Err(Error::shape("memory bank is empty"));
        }
        if query.len() != self.cfg.query_dim {
            return Err(Error::shape(format!("query has dimension {}, expected {}", query.len(), self.cfg.query_dim)));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("agent query".into()));
        }
        let d = self.cfg.embed_dim;
        let slots = self.layout_slots(rows, opts.noise.as_deref_mut())?;
        let mut u = vec![0.0; d];
        matvec(self.b_matrix(store), query, &mut u);
        let mut hops = Vec::with_capacity(self.cfg.hops);
        for k in 0..self.cfg.hops {
            let (m, c) = self.embed_hop(store, proj, &slots, k);
            let logits: Vec<f64> = m.chunks_exact(d).map(|mj| dot(&u, mj)).collect();
            let p = attend_logits(logits, opts.linear_start);
            let o = read(&p, &c);
            let (next, gate) = if self.cfg.gated {
                let (next, gate) = gated_hop(&u, &o, store.value(self.wt[k]), store.value(self.bt[k]).data());
                (next, Some(gate))
            } else {
                (o.iter().zip(&u).map(|(a, b)| a + b).collect(), None)
            };
            hops.push(HopTrace { u, m, c, p, o, gate });
            u = next;
        }
        let mut q = vec![0.0; self.cfg.num_actions];
        matvec(store.value(self.w), &u, &mut q);
        Ok(ForwardTrace {
            slots,
            query: query.to_vec(),
            linear_start: opts.linear_start,
            hops,
            u_final: u,
            q,
            payloads: Vec::new(),
        })
    }

    fn backward_core(&self, store: &mut ParamStore, proj_grad: &mut ProjTable, trace: &ForwardTrace, dq: &[f64]) -> Result<()> {
        let d = self.cfg.embed_dim;
        if dq.len() != self.cfg.num_actions
            || trace.hops.len() != self.cfg.hops
            || trace.u_final.len() != d
            || trace.query.len() != self.cfg.query_dim
            || trace.hops.iter().any(|h| h.gate.is_some() != self.cfg.gated || h.m.len() != trace.slots.len() * d)
            || trace.slots.iter().any(|s| s.pos >= self.cfg.max_mem || s.row.is_some_and(|r| r >= proj_grad.rows))
        {
            return Err(Error::shape("forward trace does not match this network"));
        }
        let (vals, mut grads) = store.split();
        add_outer(grads.get_mut(self.w), dq, &trace.u_final);
        let mut du = vec![0.0; d];
        matvec_t_add(vals.get(self.w), dq, &mut du);

        for k in (0..self.cfg.hops).rev() {
            let h = &trace.hops[k];
            let n = trace.slots.len();
            let mut du_prev = vec![0.0; d];
            let d_o: Vec<f64> = match &h.gate {
                Some(gate) => {
                    let mut dz = vec![0.0; d];
                    let mut d_o = vec![0.0; d];
                    for j in 0..d {
                        let t = gate[j];
                        d_o[j] = du[j] * t;
                        du_prev[j] = du[j] * (1.0 - t);
                        dz[j] = du[j] * (h.o[j] - h.u[j]) * t * (1.0 - t);
                    }
                    matvec_t_add(vals.get(self.wt[k]), &dz, &mut du_prev);
                    add_outer(grads.get_mut(self.wt[k]), &dz, &h.u);
                    for (g, z) in grads.get_mut(self.bt[k]).data_mut().iter_mut().zip(&dz) {
                        *g += z;
                    }
                    d_o
                }
                None => {
                    du_prev.copy_from_slice(&du);
                    du.clone()
                }
            };
            let dp: Vec<f64> = h.c.chunks_exact(d).map(|cj| dot(&d_o, cj)).collect();
            let dl: Vec<f64> = if trace.linear_start {
                dp
            } else {
                let s: f64 = h.p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                h.p.iter().zip(&dp).map(|(p, g)| p * (g - s)).collect()
            };
            for j in 0..n {
                let mj = &h.m[j * d..(j + 1) * d];
                for (x, y) in du_prev.iter_mut().zip(mj) {
                    *x += dl[j] * y;
                }
            }
            let slot_rows: Vec<Slot> = trace.slots.clone();
            {
                let gta = grads.get_mut(self.ta[k]);
                for (j, slot) in slot_rows.iter().enumerate() {
                    for (g, uu) in gta.row_mut(slot.pos).iter_mut().zip(&h.u) {
                        *g += dl[j] * uu;
                    }
                }
            }
            {
                let gtc = grads.get_mut(self.tc[k]);
                for (j, slot) in slot_rows.iter().enumerate() {
                    for (g, oo) in gtc.row_mut(slot.pos).iter_mut().zip(&d_o) {
                        *g += h.p[j] * oo;
                    }
                }
            }
            for (j, slot) in slot_rows.iter().enumerate() {
                if let Some(r) = slot.row {
                    for (g, uu) in proj_grad.row_mut(self.a_of[k], r).iter_mut().zip(&h.u) {
                        *g += dl[j] * uu;
                    }
                    for (g, oo) in proj_grad.row_mut(self.c_of[k], r).iter_mut().zip(&d_o) {
                        *g += h.p[j] * oo;
                    }
                }
            }
            du = du_prev;
        }
        let gb = match self.b {
            QueryEmbedding::Own(id) => grads.get_mut(id),
            QueryEmbedding::Shared(s) => grads.get_mut(self.emb[s]),
        };
        add_outer(gb, &du, &trace.query);
        Ok(())
    }

    fn flush_proj(&self, store: &mut ParamStore, proj_grad: &mut ProjTable, payloads: &[&[f64]], rows: std::ops::Range<usize>) {
        for (s, &id) in self.emb.iter().enumerate() {
            let g = store.grad_mut(id);
            for r in rows.clone() {
                let x = payloads[r];
                if x.is_empty() {
                    continue;
                }
                add_outer(g, proj_grad.row(s, r), x);
            }
        }
        proj_grad.clear();
    }

    /// `m_i` and `c_i` of hop `hop` (0-based) for every slot of `bank`.
    pub fn embed_memories(&self, store: &ParamStore, bank: &MemoryBank<'_>, hop: usize, noise: Option<&mut Rng>) -> Result<EmbeddedMemories> {
        if bank.is_empty() {
            return Err(Error::shape("memory bank is empty"));
        }
        if hop >= self.cfg.hops {
            return Err(Error::shape(format!("hop {hop} out of range")));
        }
        let rows: Vec<usize> = (0..bank.len()).collect();
        let proj = self.project_rows(store, &bank.payloads, 0..bank.len(), bank.len())?;
        let slots = self.layout_slots(&rows, noise)?;
        let (m, c) = self.embed_hop(store, &proj, &slots, hop);
        let d = self.cfg.embed_dim;
        Ok(EmbeddedMemories {
            slots,
            m: m.chunks_exact(d).map(<[f64]>::to_vec).collect(),
            c: c.chunks_exact(d).map(<[f64]>::to_vec).collect(),
        })
    }

    /// Q-values for the agent query given a memory bank.
    pub fn forward(&self, store: &ParamStore, bank: &MemoryBank<'_>, query: AgentQuery, opts: &mut ForwardOpts<'_>) -> Result<(Vec<f64>, ForwardTrace)> {
        self.forward_query(store, bank, &query.to_array(), opts)
    }

    /// [`GMemNet::forward`] with an arbitrary `query_dim`-vector.
    pub fn forward_query(&self, store: &ParamStore, bank: &MemoryBank<'_>, query: &[f64], opts: &mut ForwardOpts<'_>) -> Result<(Vec<f64>, ForwardTrace)> {
        let n = bank.len();
        let proj = self.project_rows(store, &bank.payloads, 0..n, n)?;
        let rows: Vec<usize> = (0..n).collect();
        let mut trace = self.forward_core(store, &proj, &rows, query, opts)?;
        trace.payloads = bank.payloads.iter().map(|p| p.to_vec()).collect();
        Ok((trace.q.clone(), trace))
    }

    /// Accumulate `∂L/∂θ` into `store`'s gradient slots given `∂L/∂Q`.
    pub fn backward(&self, store: &mut ParamStore, trace: &ForwardTrace, dq: &[f64]) -> Result<()> {
        let n = trace.payloads.len();
        if n == 0 {
            return Err(Error::shape("trace carries no memory payloads"));
        }
        let mut proj_grad = ProjTable::zeros(self.emb.len(), n, self.cfg.embed_dim);
        self.backward_core(store, &mut proj_grad, trace, dq)?;
        let payloads: Vec<&[f64]> = trace.payloads.iter().map(Vec::as_slice).collect();
        self.flush_proj(store, &mut proj_grad, &payloads, 0..n);
        Ok(())
    }

    fn view_rows(&self, view: &HistoryView<'_>) -> Vec<usize> {
        let cur = view.current_day();
        let cap = self.cfg.memory_size.unwrap_or(usize::MAX);
        let lo = view.start_day.max((cur + 1).saturating_sub(cap));
        (lo..=cur).collect()
    }
}

/// Attention weights from logits `uᵀ m_i`: softmax, or the raw logits under
/// linear start.
pub fn attend_logits(logits: Vec<f64>, linear_start: bool) -> Vec<f64> {
    if linear_start {
        logits
    } else {
        softmax_unchecked(&logits)
    }
}

/// Attention of controller `u` over memories stored row-major in `memories`.
pub fn attend(u: &[f64], memories: &[f64], linear_start: bool) -> Vec<f64> {
    assert!(!memories.is_empty() && memories.len() % u.len() == 0);
    let logits = memories.chunks_exact(u.len()).map(|m| dot(u, m)).collect();
    attend_logits(logits, linear_start)
}

/// Weighted sum `o = Σ p_i c_i` over row-major outputs `c`.
pub fn read(p: &[f64], c: &[f64]) -> Vec<f64> {
    assert!(!p.is_empty() && c.len() % p.len() == 0);
    let d = c.len() / p.len();
    // order-free sums keep Q bit-identical under slot permutations
    let mut terms = vec![0.0; p.len()];
    (0..d)
        .map(|j| {
            for (i, t) in terms.iter_mut().enumerate() {
                *t = p[i] * c[i * d + j];
            }
            order_free_sum(&mut terms)
        })
        .collect()
}

/// Transform-gated controller update. Returns `(u', T)`.
pub fn gated_hop(u: &[f64], o: &[f64], wt: &Tensor, bt: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut z = bt.to_vec();
    crate::numerics::matvec_add(wt, u, &mut z);
    let gate: Vec<f64> = z.into_iter().map(sigmoid).collect();
    let next = o.iter().zip(u).zip(&gate).map(|((o, u), t)| o * t + u * (1.0 - t)).collect();
    (next, gate)
}

impl QNetwork for GMemNet {
    type Cache = GMemCache;

    fn kind(&self) -> ModelKind {
        if self.cfg.gated {
            ModelKind::Gmemn2n
        } else {
            ModelKind::Memn2n
        }
    }

    fn num_actions(&self) -> usize {
        self.cfg.num_actions
    }

    fn init_params(&self, rng: &mut Rng) -> ParamStore {
        let sigma = self.cfg.init_sigma;
        let mut store = ParamStore::new();
        for (name, shape) in &self.layout {
            let mean = if name.starts_with("bT") { self.cfg.gate_bias_mean } else { 0.0 };
            store.add(name, gaussian_init(shape, mean, sigma, rng));
        }
        store
    }

    fn check_store(&self, store: &ParamStore) -> Result<()> {
        if store.len() != self.layout.len() {
            return Err(Error::Snapshot(format!(
                "expected {} tensors, found {}",
                self.layout.len(),
                store.len()
            )));
        }
        for (i, (name, shape)) in self.layout.iter().enumerate() {
            let id = store.require(name, shape)?;
            if id.0 != i {
                return Err(Error::Snapshot(format!("tensor {name} out of order")));
            }
        }
        Ok(())
    }

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "hops": self.cfg.hops,
            "embed_dim": self.cfg.embed_dim,
            "input_dim": self.cfg.input_dim,
            "query_dim": self.cfg.query_dim,
            "num_actions": self.cfg.num_actions,
            "max_mem": self.cfg.max_mem,
            "memory_size": self.cfg.memory_size,
            "adjacent_tying": self.cfg.adjacent_tying,
            "query_tied": matches!(self.b, QueryEmbedding::Shared(_)),
            "gated": self.cfg.gated,
        })
    }

    fn prepare(&self, store: &ParamStore, features: &[Vec<f64>], rows: std::ops::Range<usize>) -> Result<GMemCache> {
        let payloads: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        let proj = self.project_rows(store, &payloads, rows.clone(), features.len())?;
        let grad = ProjTable::zeros(self.emb.len(), features.len(), self.cfg.embed_dim);
        Ok(GMemCache {
            proj,
            grad,
            row_range: rows,
            dirty: false,
        })
    }

    fn q_values(&self, store: &ParamStore, cache: &GMemCache, view: &HistoryView<'_>, opts: &mut ForwardOpts<'_>) -> Result<Vec<f64>> {
        let rows = self.view_rows(view);
        check_rows(&rows, &cache.row_range)?;
        Ok(self.forward_core(store, &cache.proj, &rows, &view.query().to_array(), opts)?.q)
    }

    fn forward_backward(
        &self,
        store: &mut ParamStore,
        cache: &mut GMemCache,
        view: &HistoryView<'_>,
        opts: &mut ForwardOpts<'_>,
        dq: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>> {
        let rows = self.view_rows(view);
        check_rows(&rows, &cache.row_range)?;
        let trace = self.forward_core(store, &cache.proj, &rows, &view.query().to_array(), opts)?;
        let g = dq(&trace.q);
        self.backward_core(store, &mut cache.grad, &trace, &g)?;
        cache.dirty = true;
        Ok(trace.q)
    }

    fn flush_grads(&self, store: &mut ParamStore, cache: &mut GMemCache, features: &[Vec<f64>]) {
        if !cache.dirty {
            return;
        }
        let payloads: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        self.flush_proj(store, &mut cache.grad, &payloads, cache.row_range.clone());
        cache.dirty = false;
    }
}

fn check_rows(rows: &[usize], range: &std::ops::Range<usize>) -> Result<()> {
    match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if range.contains(a) && range.contains(b) => Ok(()),
        _ => Err(Error::shape(format!("history days {rows:?} fall outside the prepared range {range:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{compare_grads, finite_diff_grad};
    use crate::rng::stream;

    fn tiny(linear: bool) -> (GMemNet, ParamStore, Vec<Vec<f64>>) {
        let _ = linear;
        let cfg = GMemConfig {
            hops: 2,
            embed_dim: 4,
            input_dim: 3,
            num_actions: 3,
            max_mem: 12,
            ..GMemConfig::default()
        };
        let net = GMemNet::new(cfg).unwrap();
        let store = net.init_params(&mut stream(11, "init"));
        let mut rng = stream(11, "payload");
        let slots = (0..5)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        (net, store, slots)
    }

    #[test]
    fn zero_hops_rejected() {
        assert!(GMemNet::new(GMemConfig { hops: 0, ..GMemConfig::default() }).is_err());
    }

    #[test]
    fn tied_layout_shares_storage() {
        let net = GMemNet::new(GMemConfig::default()).unwrap();
        assert_eq!(net.c_name(1), net.a_name(2));
        assert_eq!(net.c_name(2), net.a_name(3));
        assert_ne!(net.a_name(1), net.c_name(1));
        assert_eq!(net.b_name(), "B");
        let square = GMemNet::new(GMemConfig { input_dim: 2, ..GMemConfig::default() }).unwrap();
        assert_eq!(square.b_name(), square.a_name(1));
    }

    #[test]
    fn gate_bias_initialized_around_point_two() {
        let net = GMemNet::new(GMemConfig::default()).unwrap();
        let store = net.init_params(&mut stream(0, "i"));
        let vals: Vec<f64> = (1..=3).flat_map(|k| store.value(store.id(&format!("bT{k}")).unwrap()).data().to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 0.2).abs() < 3.0 * 0.1 / (vals.len() as f64).sqrt());
    }

    #[test]
    fn zero_temporal_rows_give_plain_embedding() {
        let (net, mut store, slots) = tiny(false);
        for k in 1..=2 {
            for name in [format!("TA{k}"), format!("TC{k}")] {
                let id = store.id(&name).unwrap();
                store.value_mut(id).fill(0.0);
            }
        }
        let bank = MemoryBank::from_slots(&slots);
        let e = net.embed_memories(&store, &bank, 0, None).unwrap();
        let a = store.value(store.id(net.a_name(1)).unwrap());
        for (j, slot) in e.slots.iter().enumerate() {
            let mut expect = vec![0.0; 4];
            matvec(a, &slots[slot.row.unwrap()], &mut expect);
            assert_eq!(e.m[j], expect);
        }
        // most recent first
        assert_eq!(e.slots[0].row, Some(4));
    }

    #[test]
    fn identity_embedding_returns_payload() {
        let cfg = GMemConfig { hops: 1, embed_dim: 3, input_dim: 3, num_actions: 2, max_mem: 4, ..GMemConfig::default() };
        let net = GMemNet::new(cfg).unwrap();
        let mut store = net.init_params(&mut stream(1, "i"));
        let a = store.id(net.a_name(1)).unwrap();
        *store.value_mut(a) = Tensor::identity(3);
        store.value_mut(store.id("TA1").unwrap()).fill(0.0);
        let payload = vec![vec![0.3, -0.2, 0.9]];
        let e = net.embed_memories(&store, &MemoryBank::from_slots(&payload), 0, None).unwrap();
        assert_eq!(e.m[0], payload[0]);
    }

    #[test]
    fn noise_insertion_rate() {
        let cfg = GMemConfig { max_mem: 64, ..GMemConfig::default() };
        let net = GMemNet::new(cfg).unwrap();
        let mut rng = stream(4, "noise");
        let rows: Vec<usize> = (0..25).collect();
        let mut dummies = 0usize;
        let mut total = 0usize;
        for _ in 0..400 {
            let slots = net.layout_slots(&rows, Some(&mut rng)).unwrap();
            dummies += slots.iter().filter(|s| s.row.is_none()).count();
            total += rows.len();
        }
        let rate = dummies as f64 / total as f64;
        assert!((rate - 0.1).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn capacity_overflow_is_an_error() {
        let cfg = GMemConfig { max_mem: 3, ..GMemConfig::default() };
        let net = GMemNet::new(cfg).unwrap();
        assert!(matches!(net.layout_slots(&[0, 1, 2, 3], None), Err(Error::MemoryCapacity { pos: 3, .. })));
    }

    #[test]
    fn noise_never_overflows_a_full_memory() {
        let net = GMemNet::new(GMemConfig { max_mem: 3, noise_rate: 0.9, ..GMemConfig::default() }).unwrap();
        let mut rng = stream(4, "noise");
        for _ in 0..50 {
            let slots = net.layout_slots(&[0, 1, 2], Some(&mut rng)).unwrap();
            assert!(slots.len() <= 3);
            assert_eq!(slots[0].row, Some(2));
        }
    }

    #[test]
    fn attention_examples() {
        let u = [1.0, 0.0];
        let p = attend(&u, &[0.0, 1.0, 0.0, -2.0], false);
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(attend(&u, &[3.0, 1.0], false), vec![1.0]);
        // logits [2, -1, 0.5] under linear start pass through unchanged
        let p = attend(&[1.0], &[2.0, -1.0, 0.5], true);
        assert_eq!(p, vec![2.0, -1.0, 0.5]);
    }

    #[test]
    fn read_examples() {
        let c = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(read(&[0.0, 1.0], &c), vec![3.0, 4.0]);
        assert_eq!(read(&[0.5, 0.5], &[1.0, 2.0, 1.0, 2.0]), vec![1.0, 2.0]);
        assert_eq!(read(&[0.25, 0.75], &[1.0, 0.0, 0.0, 1.0]), vec![0.25, 0.75]);
    }

    #[test]
    fn gated_hop_examples() {
        let u = [0.2, -1.0];
        let o = [1.0, 3.0];
        let (next, gate) = gated_hop(&u, &o, &Tensor::zeros(&[2, 2]), &[0.0, 0.0]);
        assert_eq!(gate, vec![0.5, 0.5]);
        assert_eq!(next, vec![0.6, 1.0]);
        let wt = Tensor::matrix(2, 2, vec![0.3, -2.0, 1.0, 0.1]).unwrap();
        let (same, _) = gated_hop(&u, &u, &wt, &[0.4, -0.3]);
        assert_eq!(same, u.to_vec());
    }

    #[test]
    fn zero_parameters_except_head_give_zero_q() {
        let (net, mut store, slots) = tiny(false);
        let w = store.id("W").unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            if id != w {
                store.value_mut(id).fill(0.0);
            }
        }
        let (q, _) = net.forward(&store, &MemoryBank::from_slots(&slots), AgentQuery { budget: 1.0, holdings: 0.3 }, &mut ForwardOpts::default()).unwrap();
        assert_eq!(q, vec![0.0; 3]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let (net, mut store, slots) = tiny(false);
        let (_, trace) = net.forward(&store, &MemoryBank::from_slots(&slots), AgentQuery { budget: 0.9, holdings: 0.2 }, &mut ForwardOpts::default()).unwrap();
        net.backward(&mut store, &trace, &[0.0; 3]).unwrap();
        assert!(store.params().iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn mismatched_trace_rejected() {
        let (net, mut store, slots) = tiny(false);
        let (_, trace) = net.forward(&store, &MemoryBank::from_slots(&slots), AgentQuery::default(), &mut ForwardOpts::default()).unwrap();
        let other = GMemNet::new(GMemConfig { hops: 3, embed_dim: 4, input_dim: 3, max_mem: 12, ..GMemConfig::default() }).unwrap();
        let mut other_store = other.init_params(&mut stream(1, "x"));
        assert!(other.backward(&mut other_store, &trace, &[1.0; 3]).is_err());
        assert!(net.backward(&mut store, &trace, &[1.0; 2]).is_err());
    }

    fn gradcheck(linear_start: bool, noise_seed: Option<u64>) {
        let (net, mut store, slots) = tiny(linear_start);
        let query = AgentQuery { budget: 0.8, holdings: 0.35 };
        let dq = [0.7, -1.3, 0.4];
        let bank = MemoryBank::from_slots(&slots);
        let mk = || noise_seed.map(|s| stream(s, "noise"));
        let mut rng = mk();
        let mut opts = ForwardOpts { linear_start, noise: rng.as_mut() };
        let (_, trace) = net.forward(&store, &bank, query, &mut opts).unwrap();
        if noise_seed.is_some() {
            assert!(trace.slots().iter().any(|s| s.row.is_none()), "noise seed should insert a dummy");
        }
        net.backward(&mut store, &trace, &dq).unwrap();
        let numeric = finite_diff_grad(&store, 1e-5, |s| {
            let mut rng = mk();
            let mut opts = ForwardOpts { linear_start, noise: rng.as_mut() };
            let (q, _) = net.forward(s, &bank, query, &mut opts)?;
            Ok(q.iter().zip(&dq).map(|(a, b)| a * b).sum())
        })
        .unwrap();
        for check in compare_grads(&store, &numeric) {
            assert!(check.passed, "{check:?}");
        }
    }

    #[test]
    fn gradcheck_softmax() {
        gradcheck(false, None);
    }

    #[test]
    fn gradcheck_linear_start() {
        gradcheck(true, None);
    }

    #[test]
    fn gradcheck_with_empty_slots() {
        // seed chosen so that at least one empty slot is inserted
        let seed = (0..100)
            .find(|&s| {
                let (net, _, _) = tiny(false);
                let mut rng = stream(s, "noise");
                let slots = net.layout_slots(&[0, 1, 2, 3, 4], Some(&mut rng)).unwrap();
                slots.iter().any(|s| s.row.is_none())
            })
            .unwrap();
        gradcheck(false, Some(seed));
    }

    #[test]
    fn ungated_variant_gradcheck_and_residual_update() {
        let cfg = GMemConfig { hops: 2, embed_dim: 4, input_dim: 3, max_mem: 8, gated: false, ..GMemConfig::default() };
        let net = GMemNet::new(cfg).unwrap();
        let mut store = net.init_params(&mut stream(2, "i"));
        let slots = vec![vec![0.1, 0.5, 0.9], vec![0.4, 0.2, 0.3]];
        let bank = MemoryBank::from_slots(&slots);
        let (_, trace) = net.forward(&store, &bank, AgentQuery { budget: 1.0, holdings: 0.0 }, &mut ForwardOpts::default()).unwrap();
        let states = trace.controller_states();
        for (k, o) in trace.reads().iter().enumerate() {
            for j in 0..4 {
                assert!((states[k + 1][j] - (states[k][j] + o[j])).abs() < 1e-15);
            }
        }
        net.backward(&mut store, &trace, &[1.0, 0.5, -0.2]).unwrap();
        let numeric = finite_diff_grad(&store, 1e-5, |s| {
            let (q, _) = net.forward(s, &bank, AgentQuery { budget: 1.0, holdings: 0.0 }, &mut ForwardOpts::default())?;
            Ok(q[0] + 0.5 * q[1] - 0.2 * q[2])
        })
        .unwrap();
        assert!(compare_grads(&store, &numeric).iter().all(|c| c.passed));
    }

    #[test]
    fn cached_path_matches_bank_path() {
        let (net, store, slots) = tiny(false);
        let queries = vec![AgentQuery { budget: 1.0, holdings: 0.0 }; 5];
        let view = HistoryView { features: &slots, start_day: 1, t: 3, queries: &queries };
        let cache = net.prepare(&store, &slots, 1..5).unwrap();
        let q1 = net.q_values(&store, &cache, &view, &mut ForwardOpts::default()).unwrap();
        let bank = MemoryBank::new(slots[1..5].iter().map(Vec::as_slice).collect(), (1..5).collect()).unwrap();
        let (q2, _) = net.forward(&store, &bank, queries[3], &mut ForwardOpts::default()).unwrap();
        assert_eq!(q1, q2);

        let mut s1 = store.clone();
        let mut cache = cache;
        net.forward_backward(&mut s1, &mut cache, &view, &mut ForwardOpts::default(), &mut |_| vec![1.0, 2.0, 3.0]).unwrap();
        net.flush_grads(&mut s1, &mut cache, &slots);
        let mut s2 = store.clone();
        let (_, trace) = net.forward(&s2, &bank, queries[3], &mut ForwardOpts::default()).unwrap();
        net.backward(&mut s2, &trace, &[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in s1.params().iter().zip(s2.params()) {
            for (x, y) in a.grad.data().iter().zip(b.grad.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn memory_size_keeps_most_recent_days() {
        let cfg = GMemConfig { memory_size: Some(3), ..GMemConfig::default() };
        let net = GMemNet::new(cfg).unwrap();
        let feats = vec![vec![]; 20];
        let q = vec![AgentQuery::default(); 20];
        let view = HistoryView { features: &feats, start_day: 5, t: 10, queries: &q };
        assert_eq!(net.view_rows(&view), vec![13, 14, 15]);
        let early = HistoryView { t: 1, ..view };
        assert_eq!(net.view_rows(&early), vec![5, 6]);
    }
}
