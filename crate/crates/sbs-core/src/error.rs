use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not positive semi-definite")]
    NotPositiveSemiDefinite,
    #[error("all particle weights are zero")]
    AllWeightsDegenerate,
    #[error("all particle weights are zero at time {t}")]
    DegenerateWeights { t: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time index {t} outside 0..={steps}")]
    TimeOutOfRange { t: usize, steps: usize },
    #[error("twisted kernel is not integrable (I/h + 2A is not positive definite)")]
    TwistNotIntegrable,
    #[error("regression design is singular")]
    SingularDesign,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
