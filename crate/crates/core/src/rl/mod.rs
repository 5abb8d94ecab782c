//! Training and evaluation of Q-network trading policies.

pub mod eval;
pub mod replay;
pub mod schedule;
pub mod trainer;

pub use eval::{evaluate, mean_std, rollout, EvalReport, MarketData};
pub use replay::{PerConfig, PrioritizedBuffer, SampledBatch, SumTree};
pub use schedule::LrSchedule;
pub use trainer::{
    resolve, split, td_backward, td_loss, td_target, train, EpisodeLog, EpisodeTrace, NoObserver, QPair, RestartSummary, Split,
    StepInfo, TdSample, TrainConfig, TrainObserver, TrainOutcome, Transition,
};
