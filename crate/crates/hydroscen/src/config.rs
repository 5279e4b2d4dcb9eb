//! Run configuration: a single JSON document with per-subcommand sections,
//! plus a `--seed` override on the command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calendar::Window;
use crate::data::synth::SynthSpec;
use crate::error::{HydroError, Result};
use crate::train::TrainConfig;

fn default_quantiles() -> Vec<f64> {
    vec![0.10, 0.25, 0.60, 0.95]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelSizes,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub generate: GenerateSettings,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Paths {
    #[serde(default)]
    pub forcing: Option<PathBuf>,
    #[serde(default)]
    pub history: Option<PathBuf>,
    #[serde(default)]
    pub ensemble_dir: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub productivity: Option<PathBuf>,
    #[serde(default)]
    pub scenarios: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelSizes {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelSizes {
    fn default() -> Self {
        ModelSizes {
            embedding_dim: 32,
            hidden_dim: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout_rate: f64,
    pub train_window: Window,
    pub valid_window: Window,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSettings {
            learning_rate: base.learning_rate,
            max_epochs: base.max_epochs,
            patience: base.patience,
            dropout_rate: base.dropout_rate,
            train_window: base.train_window,
            valid_window: base.valid_window,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenerateSettings {
    pub n_scen: usize,
    pub diagonal_phi_y: bool,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings {
            n_scen: 30,
            diagonal_phi_y: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HydroError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| HydroError::Config(format!("bad config {}: {e}", path.display())))
    }

    /// Training configuration assembled from the settings plus the run seed
    /// and quantile levels.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            dropout_rate: self.train.dropout_rate,
            quantiles: self.quantiles.clone(),
            train_window: self.train.train_window,
            valid_window: self.train.valid_window,
            seed: self.seed,
        }
    }

}

/// The path must be configured for the chosen subcommand.
pub fn require_path<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    match field {
        Some(p) => Ok(p.as_path()),
        None => Err(HydroError::Config(format!(
            "paths.{name} is required for this subcommand"
        ))),
    }
}

/// The path must be configured and exist on disk.
pub fn require_existing<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    let p = require_path(field, name)?;
    if !p.exists() {
        return Err(HydroError::Config(format!(
            "paths.{name} = {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let json = r#"{ "paths": { "out_dir": "out" } }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.quantiles, vec![0.10, 0.25, 0.60, 0.95]);
        assert_eq!(cfg.generate.n_scen, 30);
        assert_eq!(cfg.model.embedding_dim, 32);
        assert_eq!(cfg.model.hidden_dim, 64);
        assert_eq!(cfg.train.train_window.start_year, 1981);
        assert_eq!(cfg.train.train_window.end_year, 2018);
        assert_eq!(cfg.train.valid_window.start_year, 2019);
        assert_eq!(cfg.train.valid_window.end_year, 2023);
        assert!(require_path(&cfg.paths.forcing, "forcing").is_err());
        assert!(require_path(&cfg.paths.out_dir, "out_dir").is_ok());
    }
}
