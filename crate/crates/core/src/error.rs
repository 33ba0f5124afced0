use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity appeared in a computation.
    #[error("numeric fault at node `{node}`: {detail}")]
    Numeric { node: String, detail: String },

    /// A binary or structured file did not match its declared format.
    #[error("format error in {what}: field `{field}`: {detail}")]
    Format {
        what: String,
        field: String,
        detail: String,
    },

    /// A text input failed to parse at a known location.
    #[error("parse error in {file} at line {line}{}: {detail}", column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        file: String,
        line: usize,
        column: Option<String>,
        detail: String,
    },

    /// A metric is not defined for the given input (e.g. single-class AUROC).
    #[error("undefined metric {metric}: {detail}")]
    UndefinedMetric { metric: String, detail: String },

    /// Dataset cross-references do not resolve.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("missing blob {0}")]
    MissingBlob(PathBuf),

    #[error("dimension mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    DimMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {what}: {source}")]
    Json {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    /// An error raised inside one module, annotated by the caller.
    #[error("[{module}] {context}: {source}")]
    Context {
        module: &'static str,
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(what: impl Into<String>, field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn undefined(metric: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::UndefinedMetric {
            metric: metric.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Strips any `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Attach module name and context to errors crossing module boundaries.
pub trait ResultExt<T> {
    fn within(self, module: &'static str, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn within(self, module: &'static str, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| Error::Context {
            module,
            context: context(),
            source: Box::new(e),
        })
    }
}
