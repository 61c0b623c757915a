//! Command implementations behind the `sketch2cad` binary.

pub mod commands;
pub mod error;
pub mod train_config;

pub use error::{CliError, Result};

/// Env var consulted for the default seed.
pub const SEED_ENV: &str = "SKETCH2CAD_SEED";
