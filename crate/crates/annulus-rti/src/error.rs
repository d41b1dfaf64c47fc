use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("radius {r} outside [{r1}, {r2}]")]
    OutOfDomain { r: f64, r1: f64, r2: f64 },
    #[error("density {rho} at r = {r} is not positive")]
    NonPositiveDensity { r: f64, rho: f64 },
    #[error("grid needs at least 8 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("boundary constraint rows are numerically dependent")]
    RankDeficiency,
    #[error("wavenumber must be nonzero")]
    InvalidWavenumber,
    #[error("matrix is not symmetric positive definite: {0}")]
    NonSpd(&'static str),
    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),
    #[error("no bracket: f(lambda_c) = {0} < 0")]
    NoBracket(f64),
    #[error("bisection did not converge in {0} iterations")]
    MaxIterations(usize),
    #[error("mode needs a nonzero wavenumber")]
    ZeroWavenumber,
    #[error("dispersion point carries no growth rate")]
    MissingGrowthRate,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("k = 0 Neumann problem incompatible (residual {0:e})")]
    SingularNeumann(f64),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("norm {0:e} exceeded the overflow guard")]
    BlowUp(f64),
    #[error("dt = {dt} exceeds the CFL cap {cap}")]
    CflViolation { dt: f64, cap: f64 },
    #[error("minimum density {min} fell below {threshold}")]
    PositivityLoss { min: f64, threshold: f64 },
    #[error("series contains a non-positive value")]
    NonPositiveSeries,
    #[error("input must be positive: {0}")]
    NonPositiveInput(&'static str),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("unknown lemma id `{0}`")]
    UnknownLemma(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors that stem from bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::TooFewNodes(_) | Error::UnknownLemma(_) | Error::OutOfRange(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
