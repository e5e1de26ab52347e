use std::path::PathBuf;

use crate::scale::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("syntax error in {path}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Syntax {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("{} validation violation(s): {}", .0.len(), summarize_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("raw score {raw} outside response scale [{min}, {max}]")]
    OutOfRange { raw: i32, min: i32, max: i32 },

    #[error("item `{0}` does not belong to scale `{1}`")]
    UnknownItem(String, String),

    #[error("item `{0}` supplied more than once")]
    DuplicateItem(String),

    #[error("unknown {kind} `{id}`")]
    Unresolved { kind: &'static str, id: String },

    #[error("manifest rejected: {0}")]
    Manifest(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("export: {0}")]
    Export(String),
}

fn summarize_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn yaml(path: impl Into<PathBuf>, err: serde_yaml::Error) -> Self {
        Error::Syntax {
            path: path.into(),
            line: err.location().map(|l| l.line()),
            message: err.to_string(),
        }
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            Error::Invalid(v) => v,
            _ => &[],
        }
    }
}
