use thiserror::Error;

/// Errors raised by the numerical core. Every message is prefixed with the
/// module that produced it so command-line users can locate the failure.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BcpError {
    #[error("model: diffusion coefficient not positive (sigma = {value}) at t = {t}, y = {y}")]
    NonPositiveDiffusion { t: f64, y: f64, value: f64 },

    #[error("model: quadrature did not reach tolerance {tolerance:e} (estimate {estimate:e}) on [0, {y}] at t = {t}")]
    QuadratureFailure { t: f64, y: f64, tolerance: f64, estimate: f64 },

    #[error("model: could not bracket inverse of psi_t at t = {t}, x = {x}")]
    InversionFailure { t: f64, x: f64 },

    #[error("model: boundary pair outside the admissible class: {0}")]
    BoundaryClassViolation(String),

    #[error("taylor: non-positive scheme variance factor {factor} at t = {t}, x = {x}, dt = {dt}")]
    NonPositiveVariance { t: f64, x: f64, dt: f64, factor: f64 },

    #[error("taylor: scheme {0} requires a model with a closed-form Gaussian transition")]
    NoExactTransition(&'static str),

    #[error("grid: {0}")]
    GridRegularityViolation(String),

    #[error("grid: lattice too coarse at step {step} (gamma * v = {scaled} < 1); increase n or gamma")]
    LatticeTooCoarse { step: usize, scaled: f64 },

    #[error("grid: no interior lattice states at step {0}")]
    EmptyInterior(usize),

    #[error("bridge: pin outside the open strip ({0})")]
    DomainViolation(String),

    #[error("engine: dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{module}: invalid argument: {message}")]
    InvalidArgument { module: &'static str, message: String },
}

impl BcpError {
    pub fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        BcpError::InvalidArgument { module, message: message.into() }
    }

    /// Name of the module that raised the error.
    pub fn module(&self) -> &'static str {
        match self {
            BcpError::NonPositiveDiffusion { .. }
            | BcpError::QuadratureFailure { .. }
            | BcpError::InversionFailure { .. }
            | BcpError::BoundaryClassViolation(_) => "model",
            BcpError::NonPositiveVariance { .. } | BcpError::NoExactTransition(_) => "taylor",
            BcpError::GridRegularityViolation(_) | BcpError::LatticeTooCoarse { .. } | BcpError::EmptyInterior(_) => {
                "grid"
            }
            BcpError::DomainViolation(_) => "bridge",
            BcpError::DimensionMismatch(_) => "engine",
            BcpError::InvalidArgument { module, .. } => module,
        }
    }
}

pub type Result<T> = std::result::Result<T, BcpError>;
