//! Checkpoint file: model shapes and flat row-major tensors, the grid/mask
//! layout, plant ids, the training-time normalization statistics, and the
//! monitored quantile levels — one JSON document, lossless at double
//! precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{HydroError, Result};
use crate::net::{ModelConfig, ModelParams};

pub const CHECKPOINT_FORMAT: &str = "hydroscen.checkpoint.v1";

/// A trained model together with everything needed to apply it to new data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub plants: Vec<String>,
    pub norm: NormStats,
    pub quantiles: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    n_cells: usize,
    embedding_dim: usize,
    hidden_dim: usize,
    n_plants: usize,
    plants: Vec<String>,
    quantiles: Vec<f64>,
    norm_stats: NormStats,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    values: Vec<f64>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.params.cfg.validate()?;
        if self.plants.len() != self.params.cfg.n_plants {
            return Err(HydroError::Shape(format!(
                "checkpoint has {} plant ids for {} model outputs",
                self.plants.len(),
                self.params.cfg.n_plants
            )));
        }
        let masked = self.norm.mask.iter().filter(|&&m| m).count();
        if masked != self.params.cfg.n_cells {
            return Err(HydroError::Shape(format!(
                "normalization mask has {} cells, model expects {}",
                masked, self.params.cfg.n_cells
            )));
        }
        if !self.params.is_finite() {
            return Err(HydroError::Numeric("checkpoint tensors contain NaN/Inf".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            n_cells: self.params.cfg.n_cells,
            embedding_dim: self.params.cfg.embedding_dim,
            hidden_dim: self.params.cfg.hidden_dim,
            n_plants: self.params.cfg.n_plants,
            plants: self.plants.clone(),
            quantiles: self.quantiles.clone(),
            norm_stats: self.norm.clone(),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, values)| NamedTensor {
                    name: name.to_string(),
                    values: values.to_vec(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&file)
            .map_err(|e| HydroError::Data(format!("checkpoint serialization: {e}")))?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| HydroError::io(parent, e))?;
            }
        }
        fs::write(path, text).map_err(|e| HydroError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HydroError::io(path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| HydroError::Data(format!("bad checkpoint {}: {e}", path.display())))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(HydroError::Data(format!(
                "unsupported checkpoint format {:?} in {}",
                file.format,
                path.display()
            )));
        }
        let cfg = ModelConfig {
            n_cells: file.n_cells,
            embedding_dim: file.embedding_dim,
            hidden_dim: file.hidden_dim,
            n_plants: file.n_plants,
        };
        let mut params = ModelParams::zeros(cfg);
        for nt in &file.tensors {
            let mut found = false;
            for (name, slot) in params.tensors_mut() {
                if name == nt.name {
                    if slot.len() != nt.values.len() {
                        return Err(HydroError::Shape(format!(
                            "tensor {} has {} values, expected {}",
                            nt.name,
                            nt.values.len(),
                            slot.len()
                        )));
                    }
                    slot.copy_from_slice(&nt.values);
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(HydroError::Data(format!("unknown tensor {:?}", nt.name)));
            }
        }
        let expected = crate::net::TENSOR_NAMES.len();
        if file.tensors.len() != expected {
            return Err(HydroError::Data(format!(
                "checkpoint has {} tensors, expected {expected}",
                file.tensors.len()
            )));
        }
        let ckpt = Checkpoint {
            params,
            plants: file.plants,
            norm: file.norm_stats,
            quantiles: file.quantiles,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

/// FNV-1a fingerprint of a file's bytes, used as a provenance id.
pub fn file_fingerprint(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HydroError::io(path, e))?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    Ok(format!("{hash:016x}"))
}
