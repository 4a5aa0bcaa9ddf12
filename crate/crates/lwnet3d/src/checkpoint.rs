//! Checkpoint persistence and partial (classifier-excluding) restore
//! for transfer learning.
//!
//! File layout, all integers little-endian:
//! magic `LWCK`, u32 format version, u32 tensor count, then per tensor
//! a u16 name length, UTF-8 name, u8 rank, rank x u32 extents, and the
//! f32 LE values; finally u32 metadata length and UTF-8 metadata text.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{build_model, Arch, ModelError, ModelGraph, CLASSIFIER_PREFIX};
use crate::train::{train, LabeledSet, OptimizerConfig, TrainError, TrainRecord};

pub const MAGIC: &[u8; 4] = b"LWCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("metadata is not valid TOML: {0}")]
    BadMetadata(#[from] toml::de::Error),
    #[error("unknown architecture {0:?} in metadata")]
    UnknownArch(String),
    #[error("checkpoint tensor {name} has extents {found:?}, model expects {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has tensor {0} the model does not")]
    UnknownTensor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Metadata block, stored as TOML text inside the file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub arch: String,
    pub classes: usize,
    pub seed: u64,
    #[serde(default)]
    pub note: String,
}

/// An in-memory checkpoint: named tensors plus the metadata block.
/// BTreeMap keeps the serialization order deterministic regardless of
/// insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    /// Snapshot a model's full state: parameters and BN running stats.
    pub fn from_model(model: &mut ModelGraph<f32>, seed: u64, note: &str) -> Self {
        let mut tensors = BTreeMap::new();
        model.root.visit_state(&mut |name, shape, data| {
            tensors.insert(name.to_string(), (shape, data.to_vec()));
        });
        Checkpoint {
            version: FORMAT_VERSION,
            tensors,
            meta: CheckpointMeta {
                arch: model.arch_name.clone(),
                classes: model.num_classes,
                seed,
                note: note.to_string(),
            },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, (shape, values)) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &e in shape {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = toml::to_string(&self.meta).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            let s = bytes.get(*pos..*pos + n).ok_or(CheckpointError::Truncated)?;
            *pos += n;
            Ok(s)
        };
        let take_u32 = |pos: &mut usize| -> Result<u32, CheckpointError> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = take_u32(&mut pos)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let count = take_u32(&mut pos)? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(take_u32(&mut pos)? as usize);
            }
            let len: usize = shape.iter().product();
            let values = take(&mut pos, len * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, (shape, values));
        }
        let meta_len = take_u32(&mut pos)? as usize;
        let meta_text = std::str::from_utf8(take(&mut pos, meta_len)?)
            .map_err(|_| CheckpointError::BadName)?;
        let meta = toml::from_str(meta_text)?;
        Ok(Checkpoint { version, tensors, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save_checkpoint(
    model: &mut ModelGraph<f32>,
    path: &Path,
    seed: u64,
    note: &str,
) -> Result<(), CheckpointError> {
    Checkpoint::from_model(model, seed, note).save(path)
}

/// Copy every checkpoint tensor into `model` by name, requiring an
/// exact one-to-one match between the two state registries.
fn restore_all(model: &mut ModelGraph<f32>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut consumed = 0usize;
    let mut failure = None;
    model.root.visit_state(&mut |name, shape, data| {
        if failure.is_some() {
            return;
        }
        match ckpt.tensors.get(name) {
            Some((ck_shape, values)) if *ck_shape == shape => {
                data.copy_from_slice(values);
                consumed += 1;
            }
            Some((ck_shape, _)) => {
                failure = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    found: ck_shape.clone(),
                    expected: shape,
                });
            }
            None => failure = Some(CheckpointError::MissingTensor(name.to_string())),
        }
    });
    if let Some(err) = failure {
        return Err(err);
    }
    if consumed != ckpt.tensors.len() {
        let mut model_names = std::collections::BTreeSet::new();
        model.root.visit_state(&mut |name, _, _| {
            model_names.insert(name.to_string());
        });
        let extra = ckpt
            .tensors
            .keys()
            .find(|k| !model_names.contains(*k))
            .cloned()
            .unwrap_or_default();
        return Err(CheckpointError::UnknownTensor(extra));
    }
    Ok(())
}

/// Rebuild the checkpointed model exactly: same architecture, class
/// count, parameters, and BN statistics.
pub fn load_checkpoint(path: &Path) -> Result<(ModelGraph<f32>, CheckpointMeta), CheckpointError> {
    let ckpt = Checkpoint::load(path)?;
    let arch: Arch = ckpt
        .meta
        .arch
        .parse()
        .map_err(|_| CheckpointError::UnknownArch(ckpt.meta.arch.clone()))?;
    let mut model = build_model(arch, ckpt.meta.classes, ckpt.meta.seed)?;
    restore_all(&mut model, &ckpt)?;
    Ok((model, ckpt.meta))
}

/// How a checkpoint maps onto a target task.
#[derive(Debug, Clone)]
pub struct TransferPlan {
    pub target_classes: usize,
    /// Parameters under this namespace are NOT restored; the target
    /// model keeps its fresh seeded initialization for them. `None`
    /// restores everything (requires equal class counts).
    pub exclude_prefix: Option<String>,
    /// Seed for the target model build, which determines the excluded
    /// layers' random initialization.
    pub seed: u64,
}

impl TransferPlan {
    pub fn new(target_classes: usize, seed: u64) -> Self {
        TransferPlan {
            target_classes,
            exclude_prefix: Some(CLASSIFIER_PREFIX.to_string()),
            seed,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TransferReport {
    pub transferred: Vec<String>,
    pub reinitialized: Vec<String>,
}

/// Build a target model from a source checkpoint: all tensors outside
/// the excluded namespace are copied bit-exactly (BN running statistics
/// included); excluded ones keep their seeded random initialization.
pub fn load_transfer(
    ckpt: &Checkpoint,
    plan: &TransferPlan,
) -> Result<(ModelGraph<f32>, TransferReport), CheckpointError> {
    let arch: Arch = ckpt
        .meta
        .arch
        .parse()
        .map_err(|_| CheckpointError::UnknownArch(ckpt.meta.arch.clone()))?;
    let mut model = build_model(arch, plan.target_classes, plan.seed)?;
    let report = transfer_into(&mut model, ckpt, plan.exclude_prefix.as_deref())?;
    Ok((model, report))
}

/// As [`load_transfer`], but restores into an already-built target
/// model instead of rebuilding from the architecture name.
pub fn transfer_into(
    model: &mut ModelGraph<f32>,
    ckpt: &Checkpoint,
    exclude_prefix: Option<&str>,
) -> Result<TransferReport, CheckpointError> {
    let excluded = |name: &str| -> bool {
        exclude_prefix.is_some_and(|p| name == p || name.starts_with(&format!("{p}.")))
    };
    let mut report = TransferReport::default();
    let mut failure = None;
    model.root.visit_state(&mut |name, shape, data| {
        if failure.is_some() {
            return;
        }
        if excluded(name) {
            report.reinitialized.push(name.to_string());
            return;
        }
        match ckpt.tensors.get(name) {
            Some((ck_shape, values)) if *ck_shape == shape => {
                data.copy_from_slice(values);
                report.transferred.push(name.to_string());
            }
            Some((ck_shape, _)) => {
                failure = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    found: ck_shape.clone(),
                    expected: shape,
                });
            }
            None => failure = Some(CheckpointError::MissingTensor(name.to_string())),
        }
    });
    match failure {
        Some(err) => Err(err),
        None => Ok(report),
    }
}

/// Fine-tune a transferred model: plain training with one uniform
/// learning rate over every layer, no freezing.
pub fn fine_tune(
    model: &mut ModelGraph<f32>,
    train_set: &LabeledSet<f32>,
    val_set: &LabeledSet<f32>,
    cfg: &OptimizerConfig,
) -> Result<Vec<TrainRecord>, CheckpointError> {
    Ok(train(model, train_set, val_set, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::models::build_custom;
    use crate::models::ModelSpec;
    use crate::tensor::Tensor5;

    fn mini(classes: usize, seed: u64) -> ModelGraph<f32> {
        build_custom(ModelSpec::miniature(), "lwnet20", classes, seed).unwrap()
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let mut model = mini(5, 7);
        let ckpt = Checkpoint::from_model(&mut model, 7, "test");
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn tensor_count_covers_params_and_bn_stats() {
        let mut model = mini(5, 7);
        let mut params = 0;
        let mut state = 0;
        model.root.visit_params(&mut |_, _, _| params += 1);
        model.root.visit_state(&mut |_, _, _| state += 1);
        let ckpt = Checkpoint::from_model(&mut model, 7, "");
        assert_eq!(ckpt.tensors.len(), state);
        assert!(state > params);
    }

    #[test]
    fn header_layout() {
        let mut model = mini(3, 0);
        let bytes = Checkpoint::from_model(&mut model, 0, "").to_bytes();
        assert_eq!(&bytes[0..4], b"LWCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        assert!(count > 0);
        // First record: u16 name length, then that many UTF-8 bytes.
        let name_len = u16::from_le_bytes(bytes[12..14].try_into().unwrap()) as usize;
        assert!(std::str::from_utf8(&bytes[14..14 + name_len]).is_ok());
    }

    #[test]
    fn transfer_excludes_exactly_the_classifier() {
        let mut source = mini(9, 1);
        let ckpt = Checkpoint::from_model(&mut source, 1, "");
        let mut target = mini(16, 2);
        let report = transfer_into(&mut target, &ckpt, Some(CLASSIFIER_PREFIX)).unwrap();
        assert_eq!(report.reinitialized, vec!["fc.weight", "fc.bias"]);
        let mut differing = Vec::new();
        target.root.visit_state(&mut |name, _, data| {
            if let Some((_, src)) = ckpt.tensors.get(name) {
                if src != data {
                    differing.push(name.to_string());
                }
            } else {
                differing.push(name.to_string());
            }
        });
        assert_eq!(differing, vec!["fc.weight", "fc.bias"]);
    }

    #[test]
    fn empty_exclusion_reproduces_source_exactly() {
        let mut source = mini(4, 3);
        let ckpt = Checkpoint::from_model(&mut source, 3, "");
        let mut target = mini(4, 99);
        let report = transfer_into(&mut target, &ckpt, None).unwrap();
        assert!(report.reinitialized.is_empty());
        let x = Tensor5::from_vec(
            [1, 1, 16, 9, 9],
            (0..16 * 81).map(|i| (i % 13) as f32 * 0.1 - 0.6).collect(),
        )
        .unwrap();
        let a = source.forward(&x, Mode::Eval).unwrap();
        let b = target.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let mut model = mini(3, 0);
        let mut bytes = Checkpoint::from_model(&mut model, 0, "").to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated)
        ));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }
}
