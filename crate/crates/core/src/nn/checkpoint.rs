use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::NnError;

pub const CHECKPOINT_FORMAT: &str = "counterfair-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON envelope around a model: layer shapes plus row-major
/// parameters (see [`super::Layer`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub model: T,
}

pub fn save_checkpoint<T: Serialize>(path: &Path, kind: &str, model: &T) -> Result<(), NnError> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        model,
    };
    let text = serde_json::to_string(&ck).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    crate::io::write_atomic(path, text.as_bytes()).map_err(|e| NnError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, NnError> {
    let text = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let ck: Checkpoint<T> =
        serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    if ck.kind != kind {
        return Err(NnError::Checkpoint(format!(
            "expected a `{kind}` checkpoint, found `{}`",
            ck.kind
        )));
    }
    Ok(ck.model)
}
