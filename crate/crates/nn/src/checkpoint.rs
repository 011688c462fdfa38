use std::collections::HashMap;
use std::path::Path;

use lrsim_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::container::{Container, ContainerError, NamedArray};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LRSM";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub epoch: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub config_hash: String,
    /// Anything else the writer recorded; unknown keys survive a round trip.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Named tensors plus training metadata in an `LRSM` container.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<NamedArray>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Checkpoint { arrays: Vec::new(), meta }
    }

    pub fn insert<T: Element>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let name = name.into();
        self.arrays.retain(|a| a.name != name);
        self.arrays.push(NamedArray::from_tensor(name, t));
    }

    pub fn insert_all<T: Element>(&mut self, tensors: Vec<(String, Tensor<T>)>) {
        for (name, t) in tensors {
            self.insert(name, &t);
        }
    }

    pub fn tensor<T: Element>(&self, name: &str) -> Result<Tensor<T>, ContainerError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| ContainerError::Format(format!("checkpoint has no tensor `{name}`")))?
            .to_tensor()
    }

    /// All tensors whose name starts with `prefix`, keyed by full name.
    pub fn tensors_with_prefix<T: Element>(&self, prefix: &str) -> Result<HashMap<String, Tensor<T>>, ContainerError> {
        self.arrays
            .iter()
            .filter(|a| a.name.starts_with(prefix))
            .map(|a| Ok((a.name.clone(), a.to_tensor()?)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        self.to_container()?.save(path, CHECKPOINT_MAGIC)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        self.to_container()?.encode(CHECKPOINT_MAGIC)
    }

    fn to_container(&self) -> Result<Container, ContainerError> {
        let metadata = serde_json::to_value(&self.meta).map_err(|e| ContainerError::Format(e.to_string()))?;
        Ok(Container { arrays: self.arrays.clone(), metadata })
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        Self::from_container(Container::load(path, CHECKPOINT_MAGIC)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        Self::from_container(Container::decode(CHECKPOINT_MAGIC, bytes)?)
    }

    fn from_container(c: Container) -> Result<Self, ContainerError> {
        let meta = if c.metadata.is_null() {
            CheckpointMeta::default()
        } else {
            serde_json::from_value(c.metadata).map_err(|e| ContainerError::Format(format!("bad metadata: {e}")))?
        };
        Ok(Checkpoint { arrays: c.arrays, meta })
    }
}
