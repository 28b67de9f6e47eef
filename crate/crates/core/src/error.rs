use std::path::PathBuf;

/// Errors raised by the benchmark library.
///
/// Coordination outcomes (deadlock, starvation) are never errors; they are
/// reported through [`crate::metrics::EpisodeResult`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown condition code `{code}`; valid codes: {valid}")]
    UnknownCondition { code: String, valid: String },

    #[error("unknown policy `{0}`; valid policies: greedy-left, greedy-right, dijkstra, random, polite, announce, llm")]
    UnknownPolicy(String),

    #[error("philosopher {philosopher} at timestep {timestep}: chat endpoint failed after {attempts} attempt(s): {message}")]
    Transport {
        philosopher: usize,
        timestep: u32,
        attempts: u32,
        message: String,
    },

    #[error("episode {episode}: {source}")]
    Episode {
        episode: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("missing API key: environment variable `{0}` is not set")]
    MissingApiKey(String),

    #[error("replay mismatch at line {line}: {detail}")]
    ReplayMismatch { line: usize, detail: String },

    #[error("malformed transcript {path}: {detail}")]
    Transcript { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
