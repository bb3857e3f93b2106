//! Self-describing JSON checkpoints.
//!
//! A checkpoint records everything needed to resume or fine-tune a model
//! without out-of-band knowledge: a schema version, the model spec, the
//! init seed, every parameter group (name, shape, values, perturbable
//! flag) and optionally the optimizer state (moments, sensitivity
//! averages, step count). Values are `f64` serialized as JSON numbers,
//! which round-trip bit-exactly for finite values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec, ParamGroup};

/// Bumped on any incompatible layout change.
pub const SCHEMA_VERSION: u32 = 1;

/// One parameter group's persisted weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSnapshot {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub perturbable: bool,
}

/// Optimizer state for one group, aligned with [`GroupSnapshot`] by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerGroupState {
    pub name: String,
    pub first_moment: Vec<f64>,
    pub inf_norm: Vec<f64>,
    pub sensitivity: Vec<f64>,
}

/// Optimizer state across all groups plus the global step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub groups: Vec<OptimizerGroupState>,
}

/// Complete persisted training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: ModelSpec,
    pub init_seed: u64,
    pub groups: Vec<GroupSnapshot>,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl Checkpoint {
    /// Snapshots model weights only (fresh optimizer state on restore).
    /// Fails if any value is non-finite — JSON cannot represent those, and
    /// a NaN checkpoint is never worth keeping anyway.
    pub fn capture(model: &Model) -> Result<Checkpoint> {
        Self::capture_impl(model, None)
    }

    /// Snapshots weights and optimizer state as of global step `step`.
    pub fn capture_with_optimizer(model: &Model, step: u64) -> Result<Checkpoint> {
        let opt = OptimizerSnapshot {
            step,
            groups: model
                .groups
                .iter()
                .map(|g| OptimizerGroupState {
                    name: g.name.clone(),
                    first_moment: g.first_moment.values().to_vec(),
                    inf_norm: g.inf_norm.values().to_vec(),
                    sensitivity: g.sensitivity.values().to_vec(),
                })
                .collect(),
        };
        Self::capture_impl(model, Some(opt))
    }

    fn capture_impl(model: &Model, optimizer: Option<OptimizerSnapshot>) -> Result<Checkpoint> {
        if !model.is_finite() {
            return Err(Error::Checkpoint(
                "refusing to checkpoint non-finite parameters".into(),
            ));
        }
        if let Some(opt) = &optimizer {
            let finite = opt.groups.iter().all(|g| {
                g.first_moment.iter().all(|v| v.is_finite())
                    && g.inf_norm.iter().all(|v| v.is_finite())
                    && g.sensitivity.iter().all(|v| v.is_finite())
            });
            if !finite {
                return Err(Error::Checkpoint(
                    "refusing to checkpoint non-finite optimizer state".into(),
                ));
            }
        }
        Ok(Checkpoint {
            schema_version: SCHEMA_VERSION,
            model: model.spec().clone(),
            init_seed: model.init_seed(),
            groups: model
                .groups
                .iter()
                .map(|g| GroupSnapshot {
                    name: g.name.clone(),
                    shape: g.weights.shape().to_vec(),
                    values: g.weights.values().to_vec(),
                    perturbable: g.perturbable,
                })
                .collect(),
            optimizer,
        })
    }

    /// Rebuilds a [`Model`] from this checkpoint. Group names and shapes
    /// must match the stored [`ModelSpec`]; optimizer state, when present,
    /// is restored by name.
    pub fn restore(&self) -> Result<Model> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported schema_version {} (this build reads {})",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        let mut model = Model::init(&self.model, self.init_seed)?;
        if model.groups.len() != self.groups.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} groups, spec builds {}",
                self.groups.len(),
                model.groups.len()
            )));
        }
        for (group, snap) in model.groups.iter_mut().zip(&self.groups) {
            if group.name != snap.name || group.weights.shape() != snap.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "group mismatch: spec builds {} {:?}, checkpoint holds {} {:?}",
                    group.name,
                    group.weights.shape(),
                    snap.name,
                    snap.shape
                )));
            }
            group.weights = Tensor::new(snap.shape.clone(), snap.values.clone())?;
            group.perturbable = snap.perturbable;
        }
        if let Some(opt) = &self.optimizer {
            for state in &opt.groups {
                let group = find_mut(&mut model.groups, &state.name).ok_or_else(|| {
                    Error::Checkpoint(format!("optimizer state for unknown group {}", state.name))
                })?;
                let shape = group.weights.shape().to_vec();
                group.first_moment = Tensor::new(shape.clone(), state.first_moment.clone())?;
                group.inf_norm = Tensor::new(shape.clone(), state.inf_norm.clone())?;
                group.sensitivity = Tensor::new(shape, state.sensitivity.clone())?;
            }
        }
        Ok(model)
    }

    /// Step count to resume from (0 when no optimizer state is stored).
    pub fn resume_step(&self) -> u64 {
        self.optimizer.as_ref().map(|o| o.step).unwrap_or(0)
    }

    /// Serializes to pretty JSON and writes atomically (temp + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        atomic_write(path, json.as_bytes())
    }

    /// Reads and parses a checkpoint file.
    pub fn load(path: &Path) -> Result<Checkpoint> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&raw)
            .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
        Ok(ckpt)
    }
}

fn find_mut<'a>(groups: &'a mut [ParamGroup], name: &str) -> Option<&'a mut ParamGroup> {
    groups.iter_mut().find(|g| g.name == name)
}

/// Writes a file via a same-directory temp file and rename, so readers
/// never observe a half-written file even if the process dies mid-write.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
