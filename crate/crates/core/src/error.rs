use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument fell outside its admissible range.
    #[error("{name} = {value} is out of range: {expected}")]
    Range {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Linear solver gave up before reaching the requested residual.
    #[error("linear solver failed after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    /// Newton iteration did not converge at a time step.
    #[error("newton failed at step {step} after {iterations} iterations (scaled residual {residual:e})")]
    Step {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn range(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Range {
            name,
            value,
            expected,
        }
    }

    /// True for failures raised by the numerical solvers rather than by bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Solver { .. } | Error::Step { .. })
    }
}
