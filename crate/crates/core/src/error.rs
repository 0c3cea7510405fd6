use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// Argument outside the domain of a special function.
    #[error("{func}: argument {value} outside domain ({expected})")]
    Domain {
        func: &'static str,
        value: f64,
        expected: &'static str,
    },

    /// A matrix that must be symmetric positive definite is not.
    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    /// Shapes of vectors/matrices do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Parameter value violates a documented invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Probability of the positive orthant is numerically zero.
    #[error("orthant probability {prob:e} underflows")]
    OrthantUnderflow { prob: f64 },

    /// The denominator CDF of an E-step ratio underflowed for an observation.
    #[error("observation {index}: skewing CDF underflows in component {component}")]
    CdfUnderflow { index: usize, component: usize },

    /// A mixture component lost (almost) all of its support.
    #[error("component {component} is degenerate: {reason}")]
    DegenerateComponent { component: usize, reason: String },

    /// Every start of the EM algorithm ended in component collapse.
    #[error("all {starts} EM starts collapsed")]
    AllStartsCollapsed { starts: usize },

    /// Rejection sampler accepted too few draws to be informative.
    #[error("rejection sampler acceptance rate {rate:e} below {threshold:e}; use the analytic path")]
    AcceptanceTooLow { rate: f64, threshold: f64 },

    /// Model document could not be (de)serialized.
    #[error("model serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
