use natsim_core::SimError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// Prefix a field path or sweep-point label.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            CliError::Validation { field, reason } => CliError::Validation {
                field: format!("{ctx}.{field}"),
                reason,
            },
            CliError::Numerical(m) => CliError::Numerical(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidArgument { field, reason } => CliError::Validation {
                field: field.to_string(),
                reason: reason.to_string(),
            },
            e if e.is_validation() => CliError::invalid("input", e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}
