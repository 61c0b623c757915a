//! Model and optimizer configuration. Every ablation axis lives here so that
//! experiments only need a config file.

use serde::{Deserialize, Serialize};
use sketch2cad_core::dataset::IMAGE_SIZE;
use sketch2cad_core::matching::{ConstraintWeights, PrimitiveWeights};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamHeadMode {
    /// 64-way classification per parameter slot.
    #[default]
    Classification,
    /// One real value per slot in the unit square, trained with squared error.
    Regression,
}

/// How a primitive parameter value enters the constraint net's primitive embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ParamEncoding {
    /// A learned 64-entry table per slot, indexed by the quantized value.
    #[default]
    #[serde(rename = "embedding_6bit")]
    Embedding6bit,
    /// Fixed sinusoidal features of the dequantized value, projected per slot.
    #[serde(rename = "sincos_float")]
    SincosFloat,
    /// A learned per-slot MLP of the dequantized value.
    #[serde(rename = "mlp_float")]
    MlpFloat,
}

/// Training input regime: clean inputs or perturbed ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    Noiseless,
    Noisy,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noiseless" => Ok(Regime::Noiseless),
            "noisy" => Ok(Regime::Noisy),
            _ => Err(Error::Config(format!("unknown regime {s:?} (expected noiseless|noisy)"))),
        }
    }
}

/// Transformer trunk dimensions shared by both models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transformer {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

impl Transformer {
    fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 || self.ff_dim == 0 {
            return Err(Error::Config("layer counts and ff_dim must be positive".into()));
        }
        Ok(())
    }
}

fn check_weights(named: &[(&str, f64)]) -> Result<()> {
    for (name, w) in named {
        if !(w.is_finite() && *w > 0.0) {
            return Err(Error::Config(format!("loss weight {name} must be positive, got {w}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimitiveModelConfig {
    pub image_size: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Number of primitive queries.
    pub queries: usize,
    pub weights: PrimitiveWeights,
    pub param_head_mode: ParamHeadMode,
    pub seed: u64,
}

impl Default for PrimitiveModelConfig {
    fn default() -> Self {
        Self {
            image_size: IMAGE_SIZE,
            patch_h: 16,
            patch_w: 16,
            d_model: 256,
            encoder_layers: 12,
            decoder_layers: 12,
            heads: 8,
            ff_dim: 512,
            queries: 20,
            weights: PrimitiveWeights::default(),
            param_head_mode: ParamHeadMode::Classification,
            seed: 0,
        }
    }
}

impl PrimitiveModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size != IMAGE_SIZE {
            return Err(Error::Config(format!("image_size must be {IMAGE_SIZE}, got {}", self.image_size)));
        }
        if self.patch_h == 0 || self.patch_w == 0 || self.image_size % self.patch_h != 0 || self.image_size % self.patch_w != 0 {
            return Err(Error::Config(format!(
                "patch {}x{} does not tile a {} image",
                self.patch_h, self.patch_w, self.image_size
            )));
        }
        if self.queries == 0 {
            return Err(Error::Config("queries must be positive".into()));
        }
        self.transformer().validate()?;
        let w = &self.weights;
        check_weights(&[
            ("type", w.type_weight),
            ("flag", w.flag_weight),
            ("param", w.param_weight),
            ("no_object", w.no_object_weight),
        ])
    }

    pub fn transformer(&self) -> Transformer {
        Transformer {
            d_model: self.d_model,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
        }
    }

    /// Number of patch tokens.
    pub fn patches(&self) -> usize {
        (self.image_size / self.patch_h) * (self.image_size / self.patch_w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintModelConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Number of constraint queries.
    pub queries: usize,
    /// Largest accepted primitive count; also the width of the non-pointer head.
    pub max_primitives: usize,
    pub weights: ConstraintWeights,
    pub use_pointer: bool,
    pub param_encoding: ParamEncoding,
    /// Learned positional encodings on the primitive sequence.
    pub positional_encoding: bool,
    pub seed: u64,
}

impl Default for ConstraintModelConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            encoder_layers: 12,
            decoder_layers: 12,
            heads: 8,
            ff_dim: 512,
            queries: 40,
            max_primitives: 64,
            weights: ConstraintWeights::default(),
            use_pointer: true,
            param_encoding: ParamEncoding::Embedding6bit,
            positional_encoding: true,
            seed: 0,
        }
    }
}

impl ConstraintModelConfig {
    pub fn transformer(&self) -> Transformer {
        Transformer {
            d_model: self.d_model,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
        }
    }
    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 || self.max_primitives == 0 {
            return Err(Error::Config("queries and max_primitives must be positive".into()));
        }
        self.transformer().validate()?;
        let w = &self.weights;
        check_weights(&[
            ("type", w.type_weight),
            ("param", w.param_weight),
            ("no_object", w.no_object_weight),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Multiply the learning rate by `lr_gamma` every `lr_step_epochs` epochs.
    pub lr_step_epochs: usize,
    pub lr_gamma: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    /// Evaluate metrics every this many epochs (and on the last one); 0 disables.
    pub eval_every: usize,
    /// Training sketches used for the periodic metric evaluation.
    pub eval_samples: usize,
    /// Primitive stage: train on a random grid symmetry of each sketch per epoch.
    pub augment: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr: 3e-4,
            weight_decay: 1e-4,
            lr_step_epochs: 40,
            lr_gamma: 0.3,
            grad_clip: 1.0,
            seed: 0,
            eval_every: 10,
            eval_samples: 64,
            augment: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.lr_gamma > 0.0) || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config("invalid optimizer hyper-parameters".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = if self.lr_step_epochs == 0 { 0 } else { epoch / self.lr_step_epochs };
        self.lr * self.lr_gamma.powi(steps as i32)
    }
}
