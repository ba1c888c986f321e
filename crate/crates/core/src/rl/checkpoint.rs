use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LinearPolicy, LinearValue, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of the canonical JSON form of a config.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("train configs always serialize");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Policy and value parameters plus enough metadata to reload them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub episodes_completed: usize,
    pub policy: LinearPolicy,
    pub value: LinearValue,
}

impl Checkpoint {
    pub fn new(cfg: &TrainConfig, episodes_completed: usize, policy: LinearPolicy, value: LinearValue) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(cfg),
            episodes_completed,
            policy,
            value,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoints always serialize")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| Error::WriteError {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse_json(path, &e))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        if ck.policy.bias.len() != super::Strategy::COUNT
            || ck.policy.weights.cols() != ck.value.weights.len()
        {
            return Err(Error::DimError(format!(
                "{}: policy and value heads disagree on feature length",
                path.display()
            )));
        }
        Ok(ck)
    }
}
