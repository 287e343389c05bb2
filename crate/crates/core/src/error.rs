use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input: mismatched grids, bad labels,
    /// non-finite values, parameters out of range.
    #[error("invalid input: {0}")]
    Input(String),

    /// A numerical procedure broke down (non-finite energy, failed factorization).
    #[error("numerical failure{}: {message}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numerical {
        message: String,
        iteration: Option<usize>,
    },

    /// One or more pairwise registrations failed; the listed ordered pairs are masked.
    #[error("registration failed for {} pair(s): {}", pairs.len(), format_pairs(pairs))]
    RegistrationFailures { pairs: Vec<(usize, usize)> },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_pairs(pairs: &[(usize, usize)]) -> String {
    let shown: Vec<String> = pairs.iter().take(8).map(|(i, j)| format!("({i},{j})")).collect();
    if pairs.len() > 8 {
        format!("{} ...", shown.join(" "))
    } else {
        shown.join(" ")
    }
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>, iteration: Option<usize>) -> Self {
        Error::Numerical {
            message: msg.into(),
            iteration,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
