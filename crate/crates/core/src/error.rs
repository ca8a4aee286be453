use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported element: {0}")]
    UnsupportedElement(String),

    #[error("singular or inverted jacobian in cell {cell} (det = {det:e})")]
    SingularJacobian { cell: usize, det: f64 },

    #[error("degenerate facet {0} (zero measure)")]
    DegenerateFacet(usize),

    #[error("layer collapse in column {column}, layer {layer}: local height {height:e}")]
    LayerCollapse { column: usize, layer: usize, height: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("problem size {size} exceeds the dense cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("eigenvalue gap ambiguity: {0}")]
    GapAmbiguity(String),

    #[error("nonpositive value: {0}")]
    NonPositive(String),

    #[error("incompatible data: {0}")]
    Incompatible(String),

    #[error("static instability at {location}: {detail}")]
    Instability { location: String, detail: String },

    #[error("picard residual grew across iterations: {trace:?}")]
    PicardDivergence { trace: Vec<f64> },

    #[error("affine cell required: {0}")]
    NonAffine(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("expression error: {0}")]
    Expr(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
