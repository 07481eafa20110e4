use thiserror::Error;

use crate::spectral::Field;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different geometries")]
    GeometryMismatch,

    #[error("multiplier is not finite at frequency {xi}")]
    SingularMultiplier { xi: f64 },

    #[error("spectral parameter {0} must be at least 1")]
    KappaTooSmall(f64),

    #[error("Fourier cutoff {cutoff} exceeds n_modes/2 = {max}")]
    CutoffTooLarge { cutoff: usize, max: usize },

    #[error("potential outside the smallness ball: kappa^(-1/2)|q| = {ball_check:.4e} > delta = {delta}")]
    OutsideBall { ball_check: f64, delta: f64 },

    #[error("series failed to converge after {terms} terms (last term ratio {last_ratio:.3e})")]
    SeriesDivergent { terms: usize, last_ratio: f64 },

    #[error("spectral radius of mu*T is {0:.4e}, the Neumann series cannot converge")]
    SpectralRadius(f64),

    #[error("Lax operator is numerically singular (condition estimate {0:.3e})")]
    SingularOperator(f64),

    #[error("log branch violated: mu*T has eigenvalue {re:.4e}{im:+.4e}i at or below -1")]
    LogBranch { re: f64, im: f64 },

    #[error("the two spectral parameters must differ")]
    EqualParameters,

    #[error("time step {dt:.3e} exceeds the stability bound {bound:.3e}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("flow failed at t = {t}: {source}")]
    FlowFailed {
        t: f64,
        #[source]
        source: Box<Error>,
        last_good: Box<Field>,
    },

    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64, last_good: Box<Field> },

    #[error("fixed-point inversion diverged after {iterations} iterations (residual {residual:.3e})")]
    InversionDiverged { iterations: usize, residual: f64 },

    #[error("fixed-point inversion hit max_iter = {iterations} (residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("the gauge transformation is only defined on the circle")]
    GaugeNeedsCircle,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// The core module that raises this error, for provenance in reports.
    pub fn module(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) | Error::GeometryMismatch | Error::SingularMultiplier { .. } => "spectral",
            Error::KappaTooSmall(_)
            | Error::CutoffTooLarge { .. }
            | Error::OutsideBall { .. }
            | Error::SeriesDivergent { .. }
            | Error::SpectralRadius(_)
            | Error::SingularOperator(_) => "lax",
            Error::LogBranch { .. } | Error::EqualParameters => "functionals",
            Error::StepTooLarge { .. } | Error::FlowFailed { .. } | Error::NonFinite { .. } | Error::GaugeNeedsCircle => {
                "flows"
            }
            Error::InversionDiverged { .. } | Error::MaxIterations { .. } => "inverse_map",
            Error::InvalidArgument(_) => "core",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
