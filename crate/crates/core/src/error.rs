use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("degenerate spectrum: contraction factor {kappa} is not below 1")]
    DegenerateSpectrum { kappa: f64 },
    #[error("malformed matrix file: {0}")]
    Parse(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("invalid value {0} for quantizer input")]
    InvalidValue(f64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("quantizer saturated at round {round}")]
    Saturation { round: usize },

    #[error("state diverged (non-finite value) at round {round}")]
    Divergence { round: usize },

    #[error("domain error: {0}")]
    Domain(String),
    #[error("untunable: spectral radius {rho_h} of H is not below 1; lower the step size")]
    Untunable { rho_h: f64 },
    #[error("infeasible epsilon: gamma - rho(H) - epsilon = {gap} is not positive")]
    InfeasibleEpsilon { gap: f64 },
    #[error("rate undefined: no residuals above the numerical floor in the fit window")]
    RateUndefined,
}

pub type Result<T> = std::result::Result<T, Error>;
