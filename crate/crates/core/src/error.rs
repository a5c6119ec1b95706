use thiserror::Error;

use crate::analytic::AnalyticError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("expected a single-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensor does not take part in the differentiated graph")]
    NotInGraph,

    #[error("unbound input `{0}`")]
    UnboundInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model spec: {0}")]
    Spec(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("unknown initialization scheme `{0}`")]
    UnknownScheme(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("gradient norm vanished in cosine objective")]
    ZeroGradient,

    #[error("observation does not match the model or configuration: {0}")]
    MetadataMismatch(String),

    #[error("invalid attack configuration: {0}")]
    AttackConfig(String),

    #[error("invalid federated configuration: {0}")]
    FedConfig(String),

    #[error("cannot mix raw gradients and parameter deltas in one round")]
    MixedUpdateKinds,

    #[error(transparent)]
    Analytic(#[from] AnalyticError),

    #[error("dataset format: {0}")]
    DatasetFormat(String),

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// True for errors caused by an invalid configuration or input file.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::AttackConfig(_)
                | Error::FedConfig(_)
                | Error::Spec(_)
                | Error::UnknownScheme(_)
                | Error::DatasetFormat(_)
        )
    }

    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::ZeroGradient | Error::Analytic(_)
        )
    }
}
