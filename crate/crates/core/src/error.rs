use std::path::PathBuf;

/// Errors produced anywhere in the recognition pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sample {sample}: {detail}")]
    Sample { sample: String, detail: String },

    #[error("infeasible CTC target for sample {sample}: {detail}")]
    InfeasibleTarget { sample: String, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
