//! Q-value networks over an agent's observation history.

pub mod fcnn;
pub mod gmemn2n;
pub mod lstm;
mod policy;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::ParamStore;
use crate::rng::Rng;

pub use fcnn::{Fcnn, FcnnConfig};
pub use gmemn2n::{GMemConfig, GMemNet, MemoryBank};
pub use lstm::{Lstm, LstmConfig};
pub use policy::{argmax, boltzmann};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Gated end-to-end memory network.
    Gmemn2n,
    /// Memory network with plain residual hops.
    Memn2n,
    Lstm,
    /// Memoryless two-layer perceptron.
    Fcnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gmemn2n => "gmemn2n",
            ModelKind::Memn2n => "memn2n",
            ModelKind::Lstm => "lstm",
            ModelKind::Fcnn => "fcnn",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Agent-specific question: cash and position value, both relative to the
/// initial cash.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentQuery {
    pub budget: f64,
    pub holdings: f64,
}

impl AgentQuery {
    pub const DIM: usize = 2;

    pub fn to_array(self) -> [f64; 2] {
        [self.budget, self.holdings]
    }
}

/// The observation prefix `z_{1:t}` of one episode.
///
/// `features[day]` is the encoded price window ending on `day`; the episode's
/// first decision is on `start_day` and the current one on `start_day + t`.
#[derive(Clone, Copy, Debug)]
pub struct HistoryView<'a> {
    pub features: &'a [Vec<f64>],
    pub start_day: usize,
    pub t: usize,
    /// Agent queries for decisions `0..=t`.
    pub queries: &'a [AgentQuery],
}

impl HistoryView<'_> {
    pub fn current_day(&self) -> usize {
        self.start_day + self.t
    }

    pub fn query(&self) -> AgentQuery {
        self.queries[self.t]
    }
}

/// Per-call switches for a forward pass.
#[derive(Default)]
pub struct ForwardOpts<'r> {
    /// Attention weights are the raw logits (softmax removed).
    pub linear_start: bool,
    /// Source for training-time memory noise; `None` at evaluation.
    pub noise: Option<&'r mut Rng>,
}

impl ForwardOpts<'_> {
    pub fn eval(linear_start: bool) -> Self {
        ForwardOpts {
            linear_start,
            noise: None,
        }
    }
}

/// A Q-network architecture. Parameters live in a separate [`ParamStore`] so
/// that online and target copies share one architecture value.
pub trait QNetwork: Clone + Send + Sync {
    /// Per-parameter-version precomputation shared by many forward passes.
    type Cache: Send;

    fn kind(&self) -> ModelKind;

    fn num_actions(&self) -> usize;

    fn init_params(&self, rng: &mut Rng) -> ParamStore;

    /// Verify that `store` has exactly this architecture's tensors.
    fn check_store(&self, store: &ParamStore) -> Result<()>;

    /// Architecture description embedded in snapshots.
    fn header(&self) -> serde_json::Value;

    /// Precompute what depends only on the parameters and on the features of
    /// days in `rows`.
    fn prepare(&self, store: &ParamStore, features: &[Vec<f64>], rows: std::ops::Range<usize>) -> Result<Self::Cache>;

    fn q_values(&self, store: &ParamStore, cache: &Self::Cache, view: &HistoryView<'_>, opts: &mut ForwardOpts<'_>) -> Result<Vec<f64>>;

    /// Forward pass, then backpropagate `dq(Q)` into the gradient slots of
    /// `store` (and of `cache`, flushed by [`QNetwork::flush_grads`]).
    fn forward_backward(
        &self,
        store: &mut ParamStore,
        cache: &mut Self::Cache,
        view: &HistoryView<'_>,
        opts: &mut ForwardOpts<'_>,
        dq: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>>;

    fn flush_grads(&self, store: &mut ParamStore, cache: &mut Self::Cache, features: &[Vec<f64>]);
}

pub(crate) fn concat_input(feature: &[f64], query: AgentQuery) -> Vec<f64> {
    let mut x = Vec::with_capacity(feature.len() + AgentQuery::DIM);
    x.extend_from_slice(feature);
    x.extend_from_slice(&query.to_array());
    x
}
