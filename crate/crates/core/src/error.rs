use thiserror::Error;

/// Errors raised by the filtering, joining and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Every importance weight at a stage was zero (or NaN); the particle
    /// system has collapsed.
    #[error("degenerate weights at stage {stage}: all {particles} weights are zero")]
    DegenerateWeights { stage: usize, particles: usize },

    /// A column of a boundary matrix is entirely zero, so the segment
    /// initializer does not dominate the transition density.
    #[error("segment {segment}: initializer density does not dominate the transition at particle {particle}")]
    DominanceViolation { segment: usize, particle: usize },

    /// The joined normalizer underflowed to zero.
    #[error("degenerate join: chain normalizer is zero at segment {segment}")]
    DegenerateJoin { segment: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("pair sampler assigned zero probability to pair ({0}, {1})")]
    ZeroPairProbability(usize, usize),
}

pub type Result<T> = std::result::Result<T, Error>;
