use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The bytes do not form a valid file; `offset` points at the first
    /// field or block that could not be used.
    #[error("{}: malformed {format} at byte {offset}: {reason}", path.display())]
    Format {
        path: PathBuf,
        format: &'static str,
        offset: u64,
        reason: String,
    },
    #[error("{}: unsupported CRS (EPSG code {code}); only 3857 and 4326 are handled", path.display())]
    UnsupportedCrs { path: PathBuf, code: u32 },
    #[error(transparent)]
    Core(#[from] urbanmap_core::Error),
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            path: PathBuf::new(),
            format,
            offset,
            reason: reason.into(),
        }
    }

    /// Attaches a file path to errors raised while decoding in memory.
    pub(crate) fn at(self, p: &Path) -> Self {
        match self {
            Error::Format {
                format,
                offset,
                reason,
                ..
            } => Error::Format {
                path: p.to_path_buf(),
                format,
                offset,
                reason,
            },
            Error::UnsupportedCrs { code, .. } => Error::UnsupportedCrs {
                path: p.to_path_buf(),
                code,
            },
            e => e,
        }
    }

    /// True for a missing file, as opposed to one that exists but is broken.
    pub fn is_not_found(&self) -> bool {
        matches!(self, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}
