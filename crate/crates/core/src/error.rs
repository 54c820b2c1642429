use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("malformed {kind} data: {message}")]
    Format { kind: &'static str, message: String },

    #[error("fitting diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error(
        "no pseudo-rays were registered; review sigma_z, the dictionary resolution \
         and consider relaxing cos_threshold"
    )]
    EmptyPseudoRays,

    #[error("feature extractor `{0}` cannot back-propagate")]
    NotDifferentiable(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[cfg(feature = "png")]
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable category, used by the CLI for stderr and exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Format { .. } => "format",
            Error::Divergence { .. } => "divergence",
            Error::EmptyPseudoRays => "registration",
            Error::NotDifferentiable(_) => "extractor",
            Error::Internal(_) => "internal",
            Error::Io { .. } => "io",
            #[cfg(feature = "png")]
            Error::Image { .. } => "io",
        }
    }
}
