//! Named trainable parameters and their checkpoint format.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::AutodiffError;

pub const CHECKPOINT_FORMAT: &str = "dormant-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns parameter values. Registration order is stable and defines `ParamId`s.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        value: Array2<f64>,
    ) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: "register" });
        }
        let id = ParamId(self.values.len());
        self.names.push(name.clone());
        self.values.push(value);
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, AutodiffError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn to_checkpoint(&self) -> ParamCheckpoint {
        ParamCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, value)| NamedParam {
                    name: name.clone(),
                    shape: [value.nrows(), value.ncols()],
                    values: value.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(checkpoint: &ParamCheckpoint) -> Result<Self, AutodiffError> {
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(AutodiffError::Checkpoint(format!(
                "unexpected format tag {:?}",
                checkpoint.format
            )));
        }
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                checkpoint.version
            )));
        }
        let mut store = Self::new();
        for p in &checkpoint.params {
            let value = Array2::from_shape_vec((p.shape[0], p.shape[1]), p.values.clone())
                .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", p.name)))?;
            store.register(p.name.clone(), value)?;
        }
        Ok(store)
    }

    pub fn write_checkpoint<W: Write>(&self, writer: W) -> Result<(), AutodiffError> {
        serde_json::to_writer(writer, &self.to_checkpoint())
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn read_checkpoint<R: Read>(reader: R) -> Result<Self, AutodiffError> {
        let checkpoint: ParamCheckpoint =
            serde_json::from_reader(reader).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&checkpoint)
    }
}

/// Serialized parameters: versioned header plus row-major values per name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<NamedParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}
