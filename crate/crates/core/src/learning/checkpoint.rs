//! JSON checkpoints. Network parameters are stored flattened, layer by layer,
//! each weight matrix row-major followed by its bias.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BlackBoxModel;
use crate::numcore::{Mlp, MlpParams, MlpSpec};
use crate::physnets::{CholeskyHead, DiagonalMap, InputMatrixHead, ModelKind, PotentialHead, Structure, StructuredModel};

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl NetRecord {
    pub fn from_mlp(mlp: &Mlp) -> Self {
        Self {
            spec: mlp.spec.clone(),
            params: mlp.params.flatten(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        Mlp::from_parts(self.spec.clone(), MlpParams::unflatten(&self.spec, &self.params)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CholeskyRecord {
    pub network: NetRecord,
    pub epsilon: f64,
    pub diagonal: DiagonalMap,
    pub structure: Structure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub network: NetRecord,
    pub rows: usize,
    pub cols: usize,
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredRecord {
    pub kind: ModelKind,
    pub dof: usize,
    pub inputs: usize,
    pub mass: CholeskyRecord,
    pub potential: NetRecord,
    pub damping: CholeskyRecord,
    pub input: InputRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxRecord {
    pub kind: ModelKind,
    pub dof: usize,
    pub inputs: usize,
    pub network: NetRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelRecord {
    Structured(StructuredRecord),
    Blackbox(BlackBoxRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub seed: u64,
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub model: ModelRecord,
    #[serde(default)]
    pub training: Option<TrainingSummary>,
}

/// Any model that can be stored in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum SavedModel {
    Structured(StructuredModel),
    BlackBox(BlackBoxModel),
}

impl SavedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SavedModel::Structured(m) => m.kind,
            SavedModel::BlackBox(m) => m.kind,
        }
    }

    pub fn dof(&self) -> usize {
        match self {
            SavedModel::Structured(m) => m.dof,
            SavedModel::BlackBox(m) => m.dof,
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            SavedModel::Structured(m) => m.inputs,
            SavedModel::BlackBox(m) => m.inputs,
        }
    }
}

fn cholesky_record(head: &CholeskyHead) -> CholeskyRecord {
    CholeskyRecord {
        network: NetRecord::from_mlp(&head.mlp),
        epsilon: head.epsilon,
        diagonal: head.diagonal,
        structure: head.structure,
    }
}

fn cholesky_head(rec: &CholeskyRecord) -> Result<CholeskyHead> {
    CholeskyHead::new(rec.network.to_mlp()?, rec.epsilon, rec.diagonal, rec.structure)
}

impl Checkpoint {
    pub fn new(model: &SavedModel, training: Option<TrainingSummary>) -> Self {
        let record = match model {
            SavedModel::Structured(m) => ModelRecord::Structured(StructuredRecord {
                kind: m.kind,
                dof: m.dof,
                inputs: m.inputs,
                mass: cholesky_record(&m.mass),
                potential: NetRecord::from_mlp(&m.potential.mlp),
                damping: cholesky_record(&m.damping),
                input: InputRecord {
                    network: NetRecord::from_mlp(&m.input.mlp),
                    rows: m.input.rows,
                    cols: m.input.cols,
                    bound: m.input.bound,
                },
            }),
            SavedModel::BlackBox(m) => ModelRecord::Blackbox(BlackBoxRecord {
                kind: m.kind,
                dof: m.dof,
                inputs: m.inputs,
                network: NetRecord::from_mlp(&m.mlp),
            }),
        };
        Self {
            format_version: CHECKPOINT_VERSION,
            model: record,
            training,
        }
    }

    pub fn to_model(&self) -> Result<SavedModel> {
        match &self.model {
            ModelRecord::Structured(r) => {
                let model = StructuredModel::from_heads(
                    r.kind,
                    cholesky_head(&r.mass)?,
                    PotentialHead {
                        mlp: r.potential.to_mlp()?,
                    },
                    cholesky_head(&r.damping)?,
                    InputMatrixHead {
                        mlp: r.input.network.to_mlp()?,
                        rows: r.input.rows,
                        cols: r.input.cols,
                        bound: r.input.bound,
                    },
                )?;
                if model.dof != r.dof || model.inputs != r.inputs {
                    return Err(Error::Parse("checkpoint dimensions disagree with its networks".into()));
                }
                Ok(SavedModel::Structured(model))
            }
            ModelRecord::Blackbox(r) => Ok(SavedModel::BlackBox(BlackBoxModel::from_parts(
                r.kind,
                r.dof,
                r.inputs,
                r.network.to_mlp()?,
            )?)),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates; the version is checked before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
        let found = value
            .get("format_version")
            .ok_or_else(|| Error::Parse("checkpoint: missing format_version".into()))?
            .as_u64()
            .ok_or_else(|| Error::Parse("checkpoint: format_version must be an unsigned integer".into()))?;
        if found != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
        ckpt.to_model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn save_checkpoint(model: &StructuredModel, path: &Path) -> Result<()> {
    Checkpoint::new(&SavedModel::Structured(model.clone()), None).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<StructuredModel> {
    match Checkpoint::load(path)?.to_model()? {
        SavedModel::Structured(m) => Ok(m),
        SavedModel::BlackBox(_) => Err(Error::Parse("checkpoint holds a black-box model".into())),
    }
}
