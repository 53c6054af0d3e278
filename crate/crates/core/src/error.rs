use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A document parsed but did not match the expected schema. `path` is the
    /// dotted field path reported by the deserializer.
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("unknown relevance label {0:?}")]
    Label(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("no cached entry for video `{video_id}`")]
    CacheMiss { video_id: String },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

/// Parses a JSON document, reporting the field path of the first schema error.
pub(crate) fn from_json_slice<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|err| Error::Schema {
        path: err.path().to_string(),
        message: err.inner().to_string(),
    })
}
