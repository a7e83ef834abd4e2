use thiserror::Error;

/// Errors produced while building meshes, elements and discrete systems.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("point ({x}, {y}) lies outside triangle {triangle}")]
    PointOutsideTriangle { triangle: usize, x: f64, y: f64 },

    #[error("no quadrature rule of degree {degree} ({domain})")]
    UnsupportedQuadrature { domain: &'static str, degree: usize },

    #[error("matrix not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("element {element}: ill-conditioned Gram matrix (pivot {pivot})")]
    IllConditionedElement { element: usize, pivot: usize },

    #[error("cg did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("global system is not positive definite on the free dofs: {0}")]
    IndefiniteSystem(String),

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
