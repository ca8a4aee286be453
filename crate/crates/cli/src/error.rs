use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}, column {column}: {msg}")]
    Config { line: usize, column: usize, msg: String },

    #[error("unknown config key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("invalid setting `{key}`: {msg}")]
    Setting { key: String, msg: String },

    #[error("unknown mesh spec `{0}`")]
    MeshSpec(String),

    #[error(transparent)]
    Core(#[from] terra_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Short machine-readable kind for the error line.
    pub fn kind(&self) -> &'static str {
        use terra_core::Error as E;
        match self {
            CliError::Config { .. } => "config",
            CliError::UnknownKey { .. } => "unknown_key",
            CliError::Setting { .. } => "setting",
            CliError::MeshSpec(_) => "mesh_spec",
            CliError::Io(_) => "io",
            CliError::Csv(_) => "csv",
            CliError::Core(e) => match e {
                E::InvalidArgument(_) => "invalid_argument",
                E::UnsupportedElement(_) => "unsupported_element",
                E::SingularJacobian { .. } => "singular_jacobian",
                E::DegenerateFacet(_) => "degenerate_facet",
                E::LayerCollapse { .. } => "layer_collapse",
                E::NotConverged { .. } => "not_converged",
                E::SizeCap { .. } => "size_cap",
                E::Singular(_) => "singular",
                E::GapAmbiguity(_) => "gap_ambiguity",
                E::NonPositive(_) => "nonpositive",
                E::Incompatible(_) => "incompatible",
                E::Instability { .. } => "instability",
                E::PicardDivergence { .. } => "picard_divergence",
                E::NonAffine(_) => "non_affine",
                E::Parse { .. } => "parse",
                E::Expr(_) => "expression",
                E::Io(_) => "io",
            },
        }
    }

    pub(crate) fn setting(key: &str, msg: impl Into<String>) -> Self {
        CliError::Setting { key: key.to_string(), msg: msg.into() }
    }
}
