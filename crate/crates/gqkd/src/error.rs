use thiserror::Error;

/// Errors shared by the covariance calculus, channel, sampling, oracle and
/// boundary-search layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A covariance matrix violates `a >= 1`, `b >= 1` or the symplectic
    /// eigenvalue condition `mu_min >= 1`.
    #[error("unphysical covariance matrix: {0}")]
    UnphysicalCovariance(String),

    /// A Q-form (inverse of `gamma + I`) is not positive definite.
    #[error("degenerate Q-form: A*B - C^2 = {det:e} <= 0")]
    DegenerateQForm { det: f64 },

    /// The filter `g^n` has no normalizable output on this state.
    #[error("filter with gain {gain} diverges on this state: {reason}")]
    FilterDiverges { gain: f64, reason: String },

    /// An intermediate quantity left its mathematically valid domain.
    #[error("numerical domain violation: {0}")]
    NumericalDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Amplification emulation requires `2 V_B (1 - g^-2) < 1`.
    #[error("post-selection rule does not converge: 2*V_B*(1 - g^-2) = {value} >= 1")]
    NonconvergentRule { value: f64 },

    /// The adaptive rule has no closed-form acceptance ratio.
    #[error("no closed-form acceptance ratio for the adaptive amplification rule")]
    NoClosedForm,

    #[error("need at least {needed} accepted samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// Truncation leakage of a Fock-basis state exceeds the configured bound.
    #[error("Fock cutoff too small: truncation leakage {leakage:e} exceeds {tol:e}")]
    CutoffTooSmall { leakage: f64, tol: f64 },

    /// `g^(2 n_cut)` would overflow the floating-point range.
    #[error("filter gain {gain} overflows the truncated basis at cutoff {n_cut}")]
    Overflow { gain: f64, n_cut: usize },

    /// A Fock-basis state is not a zero-mean standard-form Gaussian state.
    #[error("state is not in standard form: residual {residual:e}")]
    NotStandardForm { residual: f64 },

    /// Every candidate in a search grid was unphysical or divergent.
    #[error("every candidate in the search grid is unphysical or divergent")]
    EmptyFeasibleSet,

    /// No positive key rate even at zero excess noise; the boundary is 0.
    #[error("no positive key rate at zero excess noise")]
    NoPositiveRate,

    /// The key rate stayed positive up to the bracket cap.
    #[error("key rate still positive at the {cap}-photon bracket cap")]
    BracketCapExceeded { cap: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
