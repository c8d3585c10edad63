use thiserror::Error;

/// Errors raised by mesh generation, space construction, assembly and solves.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate element {element}: signed volume {volume:e}")]
    DegenerateElement { element: usize, volume: f64 },

    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("structural failure: {message} (elements {elements:?})")]
    Structural { message: String, elements: Vec<usize> },

    #[error("singular system: zero or unusable pivot at unknown {pivot}")]
    Singular { pivot: usize },

    #[error("solve did not reach the residual target: relative residual {residual:e}")]
    NotConverged { residual: f64 },

    #[error("property violated: {0}")]
    PropertyViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
