use std::path::Path;

use serde::Deserialize;
use sketch2cad_core::dataset::NoiseConfig;
use sketch2cad_nets::{ConstraintModelConfig, OptimConfig, PrimitiveModelConfig};

use crate::error::{CliError, Result};

/// Training config file. Every key is optional; any key present overrides its
/// default, and unknown keys are rejected.
///
/// ```json
/// {"model": {"encoder_layers": 4}, "optim": {"epochs": 20}, "noise": {"param_sigma": 1.0}}
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile<M> {
    pub model: M,
    pub optim: OptimConfig,
    pub noise: NoiseConfig,
}

pub type PrimitiveTrainFile = TrainFile<PrimitiveModelConfig>;
pub type ConstraintTrainFile = TrainFile<ConstraintModelConfig>;

impl<M: Default + for<'de> Deserialize<'de>> TrainFile<M> {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    /// `None` gives all defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}
