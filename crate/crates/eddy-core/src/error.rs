use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("unsupported dimension {got}, operation requires d = {required}")]
    UnsupportedDimension { required: usize, got: usize },

    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),

    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("probe count must be at least 1")]
    ZeroProbes,

    #[error("time {0} outside the sampler interval [0, 1]")]
    TimeOutOfRange(f64),

    #[error("time {0} is at or past the flow singularity at t = 1")]
    FlowSingularity(f64),

    #[error("mixture must have at least one component")]
    EmptyMixture,

    #[error("mixture weights must be nonnegative and sum to 1, got sum {0}")]
    InvalidWeights(f64),

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("schedule requires 0 < beta_min <= beta_max, got [{0}, {1}]")]
    InvalidSchedule(f64, f64),

    #[error("need at least {needed} particles, got {got}")]
    TooFewParticles { needed: usize, got: usize },

    #[error("step count must be at least 1")]
    ZeroSteps,

    #[error("stop ratio must lie in [0, 1], got {0}")]
    InvalidStopRatio(f64),

    #[error("guidance weight must be nonnegative, got {0}")]
    NegativeWeight(f64),

    #[error("empty sample")]
    EmptySample,

    #[error("sample of size {got} too small, need at least {needed}")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("non-finite {quantity} for particle {particle} at time {time}")]
    NonFinite {
        quantity: &'static str,
        particle: usize,
        time: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
