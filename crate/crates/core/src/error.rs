use thiserror::Error;

/// Failure modes of the numerical pipelines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("step size underflow at t = {t} (h = {h})")]
    StepFailure { t: f64, h: f64 },
    #[error("state norm {norm} exceeded the divergence bound at t = {t}")]
    Divergence { t: f64, norm: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxSteps { t: f64, max_steps: usize },
    #[error("eigenvalues at the equilibrium are not all real")]
    ComplexSpectrum,
    #[error("point ({u1}, {u2}) lies outside the section or inside its singular band")]
    OutsideSection { u1: f64, u2: f64 },
    #[error("flow direction is within {angle} of the section plane")]
    DegenerateProjection { angle: f64 },
    #[error("need at least {needed} usable samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("stable direction estimates are unavailable")]
    FoliationEstimateUnavailable,
    #[error("every return sample is censored")]
    AllCensored,
    #[error("matrix is numerically singular (condition {condition:e})")]
    SingularMatrix { condition: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
