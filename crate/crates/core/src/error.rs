use thiserror::Error;

/// Errors raised by mesh construction, discretization and the adaptive loop.
#[derive(Debug, Error)]
pub enum AfemError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("point ({x}, {y}) is not inside the mesh")]
    Lookup { x: f64, y: f64 },
    #[error("weight is singular at ({x}, {y})")]
    Singularity { x: f64, y: f64 },
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("adaptive iteration {iteration} failed: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<AfemError>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AfemError>;

pub(crate) fn input_error<T>(msg: impl Into<String>) -> Result<T> {
    Err(AfemError::Input(msg.into()))
}
