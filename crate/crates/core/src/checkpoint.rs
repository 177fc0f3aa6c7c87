//! Checkpoint container: parameters, memory state and the configuration
//! that produced them, as one JSON document.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryState;
use crate::model::{Model, ModelDims};
use crate::nn::{ParamRecord, ParamStore};
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: &str = "hyperflux-ckpt-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub dims: ModelDims,
    pub config: TrainConfig,
    /// Dataset time units per model time unit.
    pub time_scale: f64,
    pub params: BTreeMap<String, ParamRecord>,
    pub state: MemoryState,
}

#[derive(Deserialize)]
struct VersionOnly {
    version: String,
}

impl Checkpoint {
    pub fn new(model: &Model, store: &ParamStore, state: &MemoryState, config: &TrainConfig) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            dims: model.dims.clone(),
            config: config.clone(),
            time_scale: 1.0,
            params: store.to_records(),
            state: state.clone(),
        }
    }

    pub fn with_time_scale(mut self, scale: f64) -> Self {
        self.time_scale = scale;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a checkpoint, checking the version tag before the body.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: VersionOnly = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("missing version tag: {e}")))?;
        if v.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: v.version,
                expected: CHECKPOINT_VERSION.to_string(),
            });
        }
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if !(ckpt.time_scale > 0.0 && ckpt.time_scale.is_finite()) {
            return Err(Error::Checkpoint(format!("invalid time scale {}", ckpt.time_scale)));
        }
        if ckpt.state.node_count() != ckpt.dims.node_count || ckpt.state.dim() != ckpt.dims.d {
            return Err(Error::Checkpoint("memory state does not match model dimensions".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Rebuilds the model and loads the stored parameters.
    pub fn restore(&self) -> Result<(Model, ParamStore)> {
        let (model, mut store) = Model::new(self.dims.clone(), self.config.seed)?;
        store.load_records(&self.params)?;
        Ok((model, store))
    }
}
