//! Configuration, execution and reporting of quantile-regression experiments
//! for the `bqrnn` command.

// Validation uses negated comparisons such as `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

pub use config::{ExperimentConfig, FieldError};
pub use error::CliError;
pub use experiment::{execute, run_experiment, Manifest, Outcome};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "BQRNN_OUTPUT_ROOT";
