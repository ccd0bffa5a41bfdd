//! Command-line orchestration for lidarcap: configuration, training,
//! evaluation, inference and synthetic data.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{Precision, SplitSpec, TrainConfig};
pub use error::{CliError, Result};
