//! Memory-augmented Q-learning agents for market-replay trading.

pub mod bench;
pub mod checks;
pub mod config;
pub mod encoder;
pub mod env;
pub mod error;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};
