use thiserror::Error;

use crate::config::FieldError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse configuration: {0}")]
    ConfigParse(String),

    #[error("invalid configuration:\n{}", format_fields(.0))]
    Invalid(Vec<FieldError>),

    #[error("{context}: {source}")]
    Model {
        context: String,
        #[source]
        source: bqrnn_core::Error,
    },

    #[error("{0}")]
    Io(String),
}

fn format_fields(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    /// Process exit status: 1 for configuration problems, 2 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigParse(_) | CliError::Invalid(_) => 1,
            CliError::Model { .. } | CliError::Io(_) => 2,
        }
    }

    pub fn model(context: impl Into<String>) -> impl FnOnce(bqrnn_core::Error) -> Self {
        let context = context.into();
        move |source| CliError::Model { context, source }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
