//! Versioned JSON checkpoints of a policy and its training progress.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, ModelConfig, PolicyParameters};
use crate::diff::Params;
use crate::train::TrainState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed checkpoint {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("checkpoint format version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint holds {got} parameters but its model needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("checkpoint parameters are not all finite")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] AgentError),
}

/// Everything needed to rebuild a policy and resume training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    /// Training iterations completed when the checkpoint was taken.
    pub iteration: usize,
    pub mu_mean: f64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model: state.policy.config.clone(),
            iteration: state.iteration,
            mu_mean: state.mu_mean,
            params: state.policy.params.values().to_vec(),
        }
    }

    pub fn policy(&self) -> Result<PolicyParameters, CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: self.version });
        }
        let mut policy = PolicyParameters::zeros(self.model.clone())?;
        if policy.params.len() != self.params.len() {
            return Err(CheckpointError::ParamCount {
                expected: policy.params.len(),
                got: self.params.len(),
            });
        }
        if !self.params.iter().all(|v| v.is_finite()) {
            return Err(CheckpointError::NonFinite);
        }
        policy.params = Params::from_values(self.params.clone());
        Ok(policy)
    }

    pub fn into_state(self) -> Result<TrainState, CheckpointError> {
        Ok(TrainState {
            policy: self.policy()?,
            iteration: self.iteration,
            mu_mean: self.mu_mean,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoints always serialize")
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        fs::write(path, self.to_json() + "\n").map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|source| CheckpointError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: ckpt.version });
        }
        Ok(ckpt)
    }
}
