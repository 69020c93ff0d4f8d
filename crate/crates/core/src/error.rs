use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: String, reason: String },

    #[error("steady state is not unique: kernel dimension {dim}")]
    DegenerateKernel { dim: usize },

    #[error("linear system is singular")]
    Singular,

    #[error("step size underflow after t = {t_last} us")]
    StepUnderflow { t_last: f64 },

    #[error("nyquist violation: content up to {content_mhz} MHz needs more than {rate} samples/us")]
    Nyquist { content_mhz: f64, rate: f64 },

    #[error("fit did not converge (residual {residual:.3e})")]
    FitFailed { residual: f64 },

    #[error("efficiency undefined: both powers are zero")]
    ZeroPower,

    #[error("{0}")]
    Numerical(String),
}

impl SimError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::InvalidArgument {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(self, SimError::InvalidArgument { .. } | SimError::Nyquist { .. })
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
