use thiserror::Error;

/// Errors produced by the controller, identifier and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No point satisfies every row. `rows` is an irreducible infeasible subset.
    #[error("infeasible QP; irreducible conflicting rows {rows:?}")]
    Infeasible { rows: Vec<usize> },

    #[error("QP solver did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    /// `Z = G ϑ` has no solution within tolerance (quadrature or model error).
    #[error("inconsistent identification system: residual {residual:.3e} exceeds {bound:.3e}")]
    InconsistentSystem { residual: f64, bound: f64 },

    #[error("initial safety margin violated: h(x(0)) = {h0} must exceed epsilon = {epsilon}")]
    InitialMargin { h0: f64, epsilon: f64 },

    #[error("estimate {theta:?} lies outside the parameter box")]
    OutsideBox { theta: Vec<f64> },

    #[error("QP infeasible at t = {t}: {source}")]
    ControllerFailure {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
