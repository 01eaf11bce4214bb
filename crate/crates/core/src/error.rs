use thiserror::Error;

/// Errors raised by the solvers and kernels.
#[derive(Debug, Error)]
pub enum NdreError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("singular operator: {0}")]
    Singular(String),

    #[error("operator does not support inverse application")]
    NoInverse,

    #[error("Sylvester equation is numerically singular (pivot {pivot:e} below {threshold:e})")]
    SingularSylvester { pivot: f64, threshold: f64 },

    #[error("Sylvester residual check failed: {residual:e} > {bound:e}")]
    SylvesterResidual { residual: f64, bound: f64 },

    #[error("matrix exponential overflow (1-norm {norm:e})")]
    ExpOverflow { norm: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("ill-conditioned quotient at t = {time}: condition estimate {cond:e} after {halvings} substep halvings")]
    IllConditioned { time: f64, cond: f64, halvings: usize },

    #[error("time step {step} (t = {time}) failed: {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<NdreError>,
    },

    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NdreError>;

impl NdreError {
    pub(crate) fn at_step(self, step: usize, time: f64) -> Self {
        NdreError::Step {
            step,
            time,
            source: Box::new(self),
        }
    }
}
