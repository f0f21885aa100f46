use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, NetParams, NetSpec, NeuralError};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized network: spec, seed and flat parameters. Stored as JSON; floats
/// are written in shortest round-trip form so reading back is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: NetSpec,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(spec: NetSpec, seed: u64, params: &NetParams) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            spec,
            seed,
            params: params.values.clone(),
        }
    }

    pub fn to_params(&self) -> Result<NetParams, NeuralError> {
        let layout = Layout::for_spec(&self.spec);
        if layout.total != self.params.len() {
            return Err(NeuralError::ParamCount {
                expected: layout.total,
                got: self.params.len(),
            });
        }
        Ok(NetParams {
            values: self.params.clone(),
            layout,
        })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), NeuralError> {
    if ckpt.params.iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::Checkpoint("non-finite parameter".into()));
    }
    let text = serde_json::to_string(ckpt).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    fs::write(path, text).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, NeuralError> {
    let text = fs::read_to_string(path).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(NeuralError::Checkpoint(format!("unsupported version {}", ckpt.version)));
    }
    ckpt.spec.validate()?;
    ckpt.to_params()?;
    Ok(ckpt)
}
