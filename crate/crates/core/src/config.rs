//! Declarative run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, WindowConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::model::{FcnnConfig, GMemConfig, LstmConfig, ModelKind};
use crate::rl::TrainConfig;

/// How memory slots and baseline inputs are featurized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Hidden layer of the trained window encoder.
    Encoder,
    /// The normalized price window itself.
    Raw,
    /// Daily price changes over the window, scaled to unit RMS on the training days.
    Returns,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub order: usize,
    pub length: usize,
    pub amplitude: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelKind,
    /// Models compared by `bench`.
    pub bench_models: Vec<ModelKind>,
    pub output_dir: PathBuf,
    /// CSV series, resolved against the config file's directory.
    pub series: Vec<PathBuf>,
    /// Generated series, used in addition to `series`.
    pub synthetic: Vec<SyntheticSpec>,
    /// Leading days used for encoder and policy training; the test episode
    /// starts right after and lasts `env.horizon` days.
    pub train_days: usize,
    pub features: FeatureKind,
    pub eval_rollouts: usize,
    pub window: WindowConfig,
    pub encoder: EncoderConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub gmemn2n: GMemConfig,
    pub fcnn: FcnnConfig,
    pub lstm: LstmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelKind::Gmemn2n,
            bench_models: vec![ModelKind::Gmemn2n, ModelKind::Fcnn],
            output_dir: PathBuf::from("out"),
            series: Vec::new(),
            synthetic: Vec::new(),
            train_days: 200,
            features: FeatureKind::Encoder,
            eval_rollouts: 100,
            window: WindowConfig::default(),
            encoder: EncoderConfig::default(),
            env: EnvConfig::trading(),
            train: TrainConfig::default(),
            gmemn2n: GMemConfig::default(),
            fcnn: FcnnConfig::default(),
            lstm: LstmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            msg: e.message().to_string(),
        })
    }

    /// Read a config file; relative series paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        for s in &mut cfg.series {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(vec![format!("cannot serialize config: {e}")]))
    }

    /// Environment settings with the observation window taken from `window`.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            window_len: self.window.window_len,
            ..self.env.clone()
        }
    }

    /// Every violated constraint, prefixed by its field path.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.window.validate();
        errs.extend(self.encoder.validate());
        errs.extend(self.env_config().validate());
        errs.extend(self.train.validate());
        errs.extend(self.gmemn2n.validate());
        let memory_models = [ModelKind::Gmemn2n, ModelKind::Memn2n];
        if memory_models.iter().any(|m| *m == self.model || self.bench_models.contains(m)) {
            let longest = self.env.horizon.max(self.train.episode_len.unwrap_or(self.train_days));
            let need = self.gmemn2n.memory_size.map_or(longest, |m| m.min(longest));
            if need > self.gmemn2n.max_mem {
                errs.push(format!(
                    "gmemn2n.max_mem ({}) is smaller than the longest memory ({need} days); raise it or set gmemn2n.memory_size",
                    self.gmemn2n.max_mem
                ));
            }
        }
        if self.eval_rollouts == 0 {
            errs.push("eval_rollouts must be at least 1".into());
        }
        if self.train_days <= self.window.window_len {
            errs.push(format!("train_days ({}) must exceed window.window_len", self.train_days));
        }
        for (i, s) in self.synthetic.iter().enumerate() {
            if s.order == 0 {
                errs.push(format!("synthetic[{i}].order must be at least 1"));
            }
            if s.length < self.train_days + self.env.horizon {
                errs.push(format!(
                    "synthetic[{i}].length ({}) is shorter than train_days + env.horizon ({})",
                    s.length,
                    self.train_days + self.env.horizon
                ));
            }
            if !(s.amplitude > 0.0 && s.amplitude.is_finite()) {
                errs.push(format!("synthetic[{i}].amplitude must be positive"));
            }
        }
        for s in &self.series {
            if !s.is_file() {
                errs.push(format!("series file {} does not exist", s.display()));
            }
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}
