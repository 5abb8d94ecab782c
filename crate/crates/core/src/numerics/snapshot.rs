//! Parameter snapshot files.
//!
//! A snapshot is a JSON document:
//!
//! ```json
//! {
//!   "format": "memtrader-params",
//!   "version": 1,
//!   "kind": "gmemn2n",
//!   "header": { ... model-specific ... },
//!   "tensors": [ { "name": "W", "shape": [3, 20], "values": [ ... ] } ]
//! }
//! ```
//!
//! Values are IEEE-754 binary64 written in shortest round-trip form, so a
//! load after save reproduces every bit. Only values are stored; optimizer
//! moments start from zero after loading.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const FORMAT: &str = "memtrader-params";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub header: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

impl Snapshot {
    pub fn new(kind: &str, header: serde_json::Value, store: &ParamStore) -> Self {
        Snapshot {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            header,
            tensors: store
                .iter()
                .map(|(name, p)| TensorRecord {
                    name: name.into(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for rec in &self.tensors {
            if store.id(&rec.name).is_some() {
                return Err(Error::Snapshot(format!("duplicate tensor {}", rec.name)));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("snapshot tensor {}", rec.name)));
            }
            store.add(&rec.name, Tensor::from_vec(&rec.shape, rec.values.clone())?);
        }
        Ok(store)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        if self.kind != kind {
            return Err(Error::Snapshot(format!(
                "expected a {kind} snapshot, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
