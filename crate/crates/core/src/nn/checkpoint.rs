//! Versioned JSON checkpoints holding the model spec, the feature
//! normalization and every parameter array.

use super::{Model, ModelSpec, NnError, Param};
use crate::autodiff::Matrix;
use crate::preprocess::Normalization;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_FORMAT: &str = "wearnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredParam {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredCheckpoint {
    format: String,
    version: u32,
    spec: ModelSpec,
    normalization: Normalization,
    params: Vec<StoredParam>,
}

/// A trained model together with the normalization its inputs need.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub normalization: Normalization,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let stored = StoredCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.model.spec.clone(),
            normalization: self.normalization.clone(),
            params: self
                .model
                .params
                .iter()
                .map(|p| StoredParam {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    values: p.value.as_slice().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&stored).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let stored: StoredCheckpoint =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if stored.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!(
                "not a checkpoint (format '{}')",
                stored.format
            )));
        }
        if stored.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                stored.version
            )));
        }
        let mut params = Vec::with_capacity(stored.params.len());
        for p in stored.params {
            if p.values.len() != p.rows * p.cols {
                return Err(NnError::Checkpoint(format!(
                    "parameter '{}' has {} values for shape {}x{}",
                    p.name,
                    p.values.len(),
                    p.rows,
                    p.cols
                )));
            }
            params.push(Param {
                name: p.name,
                value: Matrix::from_vec(p.rows, p.cols, p.values),
            });
        }
        let model = Model::from_params(stored.spec, params)?;
        Ok(Checkpoint {
            model,
            normalization: stored.normalization,
        })
    }
}
