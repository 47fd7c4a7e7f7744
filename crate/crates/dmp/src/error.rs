use thiserror::Error;

/// Errors surfaced by the law, limit, statistic and simulation routines.
#[derive(Debug, Error)]
pub enum DmpError {
    /// The model only covers the strongly rectangular regime p >= n.
    #[error("unsupported regime: phi = {phi} < 1 (need at least as many variables as samples)")]
    UnsupportedRegime { phi: f64 },

    #[error("invalid population spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("evaluation too close to a pole of the master function at x = {x}")]
    PoleProximity { x: f64 },

    #[error("Stieltjes solver did not converge at z = {re}+{im}i (relative residual {residual:.3e})")]
    SolverDiverged { re: f64, im: f64, residual: f64 },

    #[error("support bracketing failed: {0}")]
    Bracketing(String),

    #[error("logarithmic test function undefined at argument {arg} (inside the cutoff window)")]
    LogDomain { arg: f64 },

    #[error("degenerate ratio statistic: the linear statistic in the denominator is zero")]
    DegenerateRatio,

    #[error("kappa4 = {kappa4} outside (-2, inf); the limiting variance degenerates")]
    KappaRange { kappa4: f64 },

    #[error("coincident evaluation points are not allowed for covariance kernels")]
    CoincidentPoints,

    #[error("quadrature failed to stabilize: {0}")]
    NonConvergence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DmpError>;
