use thiserror::Error;

/// Errors surfaced by scenario construction, the solvers, and the harness.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("argument outside the function domain: {0}")]
    Domain(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("instance is infeasible (max-min constraint slack {slack:.3e})")]
    Infeasible { slack: f64 },

    #[error("linear program could not be solved: {0}")]
    Lp(String),

    #[error("coordinate ascent stalled after {passes} passes (last objective {last_value:.6e})")]
    BcdStalled {
        passes: usize,
        last_value: f64,
        last_tau: Vec<f64>,
        last_s: Vec<f64>,
    },

    #[error("ellipsoid update lost positive definiteness at iteration {iters}: {detail}")]
    EllipsoidNumerical { iters: usize, detail: String },

    #[error("damped-Newton line search failed: no backtracking step within {max_backtracks} \
             trials reduced the residual norm {psi_norm:.3e}")]
    LineSearchFailed { psi_norm: f64, max_backtracks: usize },

    #[error("solver did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("grid would require {evals} evaluations (cap {cap})")]
    GridTooLarge { evals: u128, cap: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;
