//! JSON checkpoint manifest.
//!
//! ```json
//! {
//!   "format": "erank-checkpoint/1",
//!   "spec": { "num_layers": 1, "num_heads": 1, ... },
//!   "weights": {
//!     "layer0.head0.wq": { "rows": 8, "cols": 4, "data": [ ... ] },
//!     "layer0.head0.wk": { "csv": "wk.csv" }
//!   }
//! }
//! ```
//!
//! Weight names follow [`ModelParams::tensors`]. A weight is either inline
//! (row-major `data`) or a reference to a CSV file resolved relative to the
//! manifest's directory. Every tensor the spec implies must be present and no
//! others.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const FORMAT: &str = "erank-checkpoint/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightRef {
    Csv {
        csv: String,
    },
    Inline(Matrix),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub spec: ModelSpec,
    pub weights: BTreeMap<String, WeightRef>,
}

impl Manifest {
    pub fn inline(spec: &ModelSpec, params: &ModelParams) -> Self {
        let weights = params
            .tensors()
            .into_iter()
            .map(|(name, m)| (name, WeightRef::Inline(m.clone())))
            .collect();
        Manifest {
            format: FORMAT.to_string(),
            spec: spec.clone(),
            weights,
        }
    }

    /// Resolves all weights; CSV paths are relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<(ModelSpec, ModelParams)> {
        if self.format != FORMAT {
            return Err(Error::domain(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        self.spec.validate()?;
        let mut params = ModelParams::zeros(&self.spec);
        let expected: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        if let Some(extra) = self.weights.keys().find(|k| !expected.contains(k)) {
            return Err(Error::domain(format!("unknown weight {extra:?}")));
        }
        for (name, slot) in params.tensors_mut() {
            let entry = self
                .weights
                .get(&name)
                .ok_or_else(|| Error::domain(format!("missing weight {name:?}")))?;
            let m = match entry {
                WeightRef::Inline(m) => m.clone(),
                WeightRef::Csv { csv } => Matrix::read_csv(&base_dir.join(csv))?,
            };
            if m.shape() != slot.shape() {
                return Err(Error::shape(format!(
                    "{name}: {:?}, spec expects {:?}",
                    m.shape(),
                    slot.shape()
                )));
            }
            *slot = m;
        }
        Ok((self.spec.clone(), params))
    }
}

pub fn save(path: &Path, spec: &ModelSpec, params: &ModelParams) -> Result<()> {
    let text = serde_json::to_string_pretty(&Manifest::inline(spec, params))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelSpec, ModelParams)> {
    let text = std::fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest.resolve(base)
}
