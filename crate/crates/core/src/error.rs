use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:e}, margin {margin:e})")]
    NotHurwitz { abscissa: f64, margin: f64 },
    #[error("linear solve failed: {0}")]
    SingularSolve(String),
    #[error("eigenvalue computation failed to converge")]
    EigFailure,
    #[error("resolvent is singular at omega = {0}")]
    SingularAtFrequency(f64),
    #[error("could not draw a full-row-rank DC gain after {0} resamples")]
    RankDeficiencyAfterRetries(usize),
    #[error("invalid norm weight: {0}")]
    InvalidWeight(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("jacobian evaluation failed at {point:?}: {reason}")]
    JacobianEvalFailure { point: Vec<f64>, reason: String },
    #[error("fixed-point iteration diverged after {0} iterations")]
    FixedPointDivergence(usize),
    #[error("cone basis is singular (mu = L)")]
    SingularBasis,
    #[error("dual cone unavailable for the skew-parameterized family")]
    DualUnavailable,
    #[error("dual cone violates the sign conditions: {0}")]
    DualConeInvalid(String),
    #[error("no feasible gamma below the expansion cap {0}")]
    NoFeasibleGamma(f64),
    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("structured problem infeasible while the unstructured one is feasible")]
    StructureTooRestrictive,
    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),
    #[error("step size underflow at t = {0}")]
    StepSizeUnderflow(f64),
    #[error("incremental gain undefined: disturbance difference has zero energy")]
    ZeroDenominator,
    #[error("no sensitivity crossover found: {0}")]
    NoCrossover(String),
    #[error("sector violation: {0}")]
    SectorViolation(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for outcomes that mean "no solution exists" rather than a bad input
    /// or a numerical breakdown.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::Infeasible(_)
                | Error::NotHurwitz { .. }
                | Error::RankDeficient(_)
                | Error::StructureTooRestrictive
                | Error::NoFeasibleGamma(_)
                | Error::RankDeficiencyAfterRetries(_)
        )
    }
}
