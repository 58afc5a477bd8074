//! JSON parameter checkpoints.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so a save/load cycle reproduces every finite double bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Architecture, ModelParams};

pub const FORMAT: &str = "glu-scaling-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub arch: Architecture,
    /// Flattened in `G, g, U, u, Q, q, D, d` order.
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            arch: params.arch,
            params: params.to_flat(),
        }
    }

    pub fn into_params(self) -> Result<ModelParams> {
        if self.format != FORMAT {
            return Err(Error::InvalidConfig(format!(
                "not a checkpoint (format {:?})",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(Error::Unsupported(format!(
                "checkpoint version {}",
                self.version
            )));
        }
        ModelParams::from_flat(self.arch, &self.params)
    }
}

pub fn to_string(params: &ModelParams) -> Result<String> {
    params.validate()?;
    Ok(serde_json::to_string_pretty(&Checkpoint::new(params))?)
}

pub fn from_str(text: &str) -> Result<ModelParams> {
    serde_json::from_str::<Checkpoint>(text)?.into_params()
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = to_string(params)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}
