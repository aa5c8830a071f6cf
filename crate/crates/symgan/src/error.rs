use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] symgan_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unreadable source {path}: {message}")]
    UnreadableSource { path: PathBuf, message: String },
    #[error("malformed MusicXML: {0}")]
    MalformedDocument(String),
    #[error("unsupported MusicXML structure: {0}")]
    UnsupportedStructure(String),
    #[error("no images in {0}")]
    EmptyDirectory(PathBuf),
    #[error("feature extractor unavailable: {0}")]
    ExtractorUnavailable(String),
    #[error("not a checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("{what} not found: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
}

impl Error {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, message: impl ToString) -> Error {
        Error::Parse {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}
