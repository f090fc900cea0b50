//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design matrix X is rank deficient: rank {rank} < p = {p}")]
    RankDeficientX { rank: usize, p: usize },
    #[error("empty data")]
    EmptyData,
    #[error("scale parameter must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("shape parameter delta must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("skewness parameter {value} outside the domain of the {parameterisation} parameterisation")]
    GammaOutOfDomain {
        value: f64,
        parameterisation: &'static str,
    },
    #[error("correlation parameter must lie in (-1, 1), got {0}")]
    CorrelationOutOfDomain(f64),
    #[error("argument {0} outside the domain of this map")]
    OutOfDomain(f64),
    #[error("quadrature failed to reach the requested tolerance (estimate {estimate}, error {error})")]
    QuadratureFailure { estimate: f64, error: f64 },
    #[error("prior has mass on delta <= {bound}, violating the moment support condition")]
    SupportViolation { bound: f64 },
    #[error("simplex anti-cycling rule exhausted; verdict indeterminate")]
    DegenerateCycle,
    #[error("propriety check refused sampling: {0}")]
    ProprietyRefused(String),
    #[error("log joint density is not finite at the initial state")]
    NonFiniteLogJoint,
    #[error("posterior sample is empty")]
    EmptySample,
    #[error("parameter {0} absent from the posterior sample")]
    ParameterAbsent(String),
    #[error("evaluation point {0} lies outside the prior support")]
    PointOutsideSupport(f64),
    #[error("too few posterior draws ({0}); at least 100 are required")]
    TooFewDraws(usize),
    #[error("unknown scenario id {0:?}")]
    UnknownScenario(String),
    #[error("data schema error: {0}")]
    SchemaError(String),
    #[error("survival time must be positive in MEAFT mode, got {0}")]
    NonPositiveSurvivalTime(f64),
    #[error("interval bounds out of order: ({0}, {1})")]
    UnorderedInterval(f64, f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
