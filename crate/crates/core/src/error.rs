use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Total stiffness does not exceed the damping term, so there is no oscillation.
    #[error("non-oscillatory system: k/J = {stiffness_ratio:e} 1/s² does not exceed δ² = {damping_sq:e} 1/s²")]
    NonOscillatory { stiffness_ratio: f64, damping_sq: f64 },

    #[error("argument outside the domain of `{op}`: {reason}")]
    Domain { op: &'static str, reason: String },

    #[error("degenerate geometry in `{op}`: {reason}")]
    Degenerate { op: &'static str, reason: String },

    #[error("dipole field is singular at r = 0")]
    Singularity,

    #[error("time step {dt:e} s too coarse; need dt <= {max_dt:e} s (50 samples per period)")]
    Resolution { dt: f64, max_dt: f64 },

    #[error("simulation diverged at t = {t} s (|dθ/dt| = {rate:e} rad/s)")]
    Divergence { t: f64, rate: f64 },

    #[error("trajectory holds {found} oscillation periods, need at least {needed}")]
    InsufficientPeriods { found: usize, needed: usize },

    #[error("no oscillation detected: spectral peak SNR {snr:.2} < 3")]
    NoOscillation { snr: f64 },

    #[error("singular Jacobian at the solution; consider freezing one of: {suggestion}")]
    SingularJacobian { suggestion: String },

    #[error("sweep is not identifiable: {0}")]
    Identifiability(String),

    #[error("calibration is rank deficient: {0}")]
    RankDeficient(String),

    #[error("{0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV {path}:{line}: {reason}")]
    Csv {
        path: String,
        line: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
