use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the planning stack.
///
/// Outcomes such as "no IK solution" or "infeasible cell" are values, not
/// errors; this enum covers malformed inputs and stage failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation: zero-norm rotation input")]
    DegenerateRotation,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid robot model: {0}")]
    InvalidModel(String),

    #[error("singular home configuration")]
    SingularHome,

    #[error("empty tessellation")]
    EmptyTessellation,

    #[error("trajectory too short: need at least {min} points, got {got}")]
    TrajectoryTooShort { min: usize, got: usize },

    #[error("skill/task displacement mismatch")]
    DisplacementMismatch,

    #[error("no admissible skill for segment {from}..{to}")]
    NoAdmissibleSkill { from: usize, to: usize },

    #[error("empty task set")]
    EmptyTaskSet,

    #[error("empty skill library")]
    EmptyLibrary,

    #[error("duplicate skill id {0:?}")]
    DuplicateSkill(String),

    #[error("no infeasible segments: DRL training unnecessary")]
    NoInfeasibleSegments,

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("stale artifact {path}: manifest hash mismatch")]
    StaleArtifact { path: PathBuf },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the pipeline stage that produced this error.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for input/config validation failures (CLI exit code 1).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Dimension { .. }
            | Error::InvalidModel(_)
            | Error::SingularHome
            | Error::MissingArtifact(_)
            | Error::StaleArtifact { .. }
            | Error::DegenerateRotation => true,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
