//! Transformer networks for the two parsing stages, their training loops,
//! checkpoints, evaluation and the assembled pipeline.
//!
//! All tensors live on the CPU in f32. Loss values and logit gradients are
//! computed by `sketch2cad-core` in f64.

pub mod checkpoint;
pub mod config;
pub mod constraint;
pub mod error;
pub mod eval;
mod init;
pub mod inputs;
mod layers;
pub mod pipeline;
pub mod primitive;
pub mod train;

pub use checkpoint::{CheckpointDir, Stage, TrainState};
pub use config::{ConstraintModelConfig, OptimConfig, ParamEncoding, ParamHeadMode, PrimitiveModelConfig, Regime};
pub use constraint::{pointer, ConstraintLogits, ConstraintNet};
pub use error::{Error, Result};
pub use pipeline::{Parsed, Pipeline};
pub use primitive::{patchify, PrimitiveLogits, PrimitiveNet};
pub use train::{fit_constraint, fit_primitive, train_constraint, train_primitive, EpochRecord, TrainSpec};
