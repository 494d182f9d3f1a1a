use thiserror::Error;

/// Errors produced by the numerical laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("region is empty: {0}")]
    EmptyRegion(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("Picard iteration did not converge at time level {level}: last change {change:e} after {iterations} iterations")]
    PicardNonConvergence {
        level: usize,
        iterations: usize,
        change: f64,
        last_iterate: Vec<f64>,
    },

    #[error("linear solver breakdown: {0}")]
    LinearSolver(String),

    #[error("eps-monotonicity violated at level {level}, node {node}: u(eps={eps_small:e}) - u(eps={eps_large:e}) = {gap:e}")]
    MonotonicityViolation {
        level: usize,
        node: usize,
        eps_small: f64,
        eps_large: f64,
        gap: f64,
    },

    #[error("least solution did not converge within the schedule; tail sup-differences {tail:?}")]
    NotConverged { tail: Vec<f64> },

    #[error("multiple sign changes of u along the time line at x = {x:?}")]
    MultipleCrossings { x: [f64; 2] },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("region leaves the computational domain: {0}")]
    OutsideDomain(String),

    #[error("column at node {node} (time level {level}) is not strictly increasing")]
    NotMonotone { node: usize, level: usize },

    #[error("non-positive v_n = {value:e} at node {node}, level {level}")]
    Degenerate { node: usize, level: usize, value: f64 },

    #[error("ODE integration overflowed; last finite x = {last_x}")]
    Overflow { last_x: f64 },

    #[error("negative set persists to the end of the horizon (t = {t_end}); use a longer horizon")]
    NoCollapse { t_end: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed field container: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
