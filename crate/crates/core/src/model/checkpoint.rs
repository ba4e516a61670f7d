use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::corpus::write_atomic;
use crate::error::{Error, Result};

const FORMAT: &str = "arglink-checkpoint";
const VERSION: u32 = 1;

/// JSON container for a trained model. Floats are written with shortest
/// round-trip formatting, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Format(format!(
                "not a v{VERSION} checkpoint: {} v{}",
                ck.format, ck.version
            )));
        }
        let fresh = ModelParams::init(&ck.config);
        let shapes_match = fresh
            .tensors()
            .iter()
            .zip(ck.params.tensors())
            .all(|((a, x), (b, y))| a == &b && x.dim() == y.dim())
            && fresh.tensors().len() == ck.params.tensors().len();
        if !shapes_match {
            return Err(Error::Format("parameter shapes disagree with the stored config".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = self.to_json()?;
        write_atomic(path, |w| w.write_all(json.as_bytes()).map_err(|e| Error::io(path, e)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
