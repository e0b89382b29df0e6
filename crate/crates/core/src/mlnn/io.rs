//! Model files: JSON with a format tag and version. Floats are written with
//! shortest round-trip formatting, so save followed by load reproduces every
//! weight bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MlnnModel;
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "doa-lab-mlnn";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    model: MlnnModel,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

impl MlnnModel {
    pub fn to_json(&self) -> Result<String> {
        self.check_shape()?;
        let file = ModelFile { format: FORMAT_TAG.into(), version: FORMAT_VERSION, model: self.clone() };
        serde_json::to_string_pretty(&file).map_err(|e| bad(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.format != FORMAT_TAG {
            return Err(bad(format!("unknown format tag {:?}", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {} (this build reads {FORMAT_VERSION})", file.version)));
        }
        file.model.check_shape()?;
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn check_shape(&self) -> Result<()> {
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 || *sizes.last().unwrap() != 1 || sizes.contains(&0) {
            return Err(bad(format!("layer sizes {sizes:?} must be positive and end in 1")));
        }
        if self.activations.len() != sizes.len() - 2 || self.layers.len() != sizes.len() - 1 {
            return Err(bad("activation or layer count does not match layer sizes"));
        }
        for (l, w) in self.layers.iter().zip(sizes.windows(2)) {
            if l.inputs != w[0] || l.outputs != w[1] || l.weights.len() != w[0] * w[1] || l.biases.len() != w[1] {
                return Err(bad(format!("layer {}x{} does not match sizes {w:?}", l.outputs, l.inputs)));
            }
        }
        if self.input_shift.len() != sizes[0] || self.input_scale.len() != sizes[0] {
            return Err(bad("input scaling length does not match the input layer"));
        }
        let finite = self.params().iter().chain(&self.input_shift).chain(&self.input_scale).all(|v| v.is_finite());
        if !finite {
            return Err(bad("non-finite parameter"));
        }
        Ok(())
    }
}
