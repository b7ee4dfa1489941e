//! Versioned JSON model checkpoints.
//!
//! A checkpoint holds the architecture descriptor, the flattened extractor
//! parameters, batch-norm running statistics, the classifier head and the seed
//! the network was built from. Floats are written in shortest round-trip form,
//! so loading and re-saving reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::extractor::FeatureExtractor;
use super::head::{ClassifierHead, InitMode};
use super::layer::{LayerSpec, RunningStats};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "fast-transfer/model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadRecord {
    pub classes: usize,
    pub features: usize,
    pub init: InitMode,
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub input_shape: Vec<usize>,
    pub architecture: Vec<LayerSpec>,
    pub theta: Vec<f64>,
    pub running_stats: Vec<RunningStats>,
    pub head: HeadRecord,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: ModelCheckpoint = serde_json::from_slice(bytes)
            .map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// A complete classifier: feature extractor plus softmax head.
#[derive(Debug, Clone)]
pub struct Network {
    pub extractor: FeatureExtractor,
    pub head: ClassifierHead,
    pub seed: u64,
}

impl Network {
    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            input_shape: self.extractor.input_shape().to_vec(),
            architecture: self.extractor.specs(),
            theta: self.extractor.theta(),
            running_stats: self.extractor.running_stats(),
            head: HeadRecord {
                classes: self.head.classes(),
                features: self.head.features(),
                init: self.head.init_mode(),
                weight: self.head.weight().data().to_vec(),
            },
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let mut extractor =
            FeatureExtractor::new(&ckpt.input_shape, ckpt.architecture.clone(), ckpt.seed)
                .map_err(|e| Error::Checkpoint(format!("architecture: {e}")))?;
        extractor
            .set_theta(&ckpt.theta)
            .map_err(|e| Error::Checkpoint(format!("parameters: {e}")))?;
        extractor
            .set_running_stats(&ckpt.running_stats)
            .map_err(|e| Error::Checkpoint(format!("running stats: {e}")))?;
        if ckpt.head.features != extractor.output_dim() {
            return Err(Error::Checkpoint(format!(
                "head expects D={} but the extractor produces D={}",
                ckpt.head.features,
                extractor.output_dim()
            )));
        }
        let weight = Tensor::new(vec![ckpt.head.classes, ckpt.head.features], ckpt.head.weight.clone())
            .map_err(|e| Error::Checkpoint(format!("head: {e}")))?;
        if !weight.is_finite() || ckpt.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            extractor,
            head: ClassifierHead::from_weight(weight, ckpt.head.init)?,
            seed: ckpt.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&ModelCheckpoint::load(path)?)
    }
}
