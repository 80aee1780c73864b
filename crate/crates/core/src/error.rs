use std::fmt;
use std::io;
use std::path::PathBuf;

/// Errors surfaced by the recommender pipeline.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration value or flag combination.
    Config(String),
    /// A data file could not be parsed; carries the 1-based line number.
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// A triple references an id outside the declared ranges.
    TripleOutOfRange {
        index: usize,
        head: u32,
        relation: u32,
        tail: u32,
        entity_count: u32,
        relation_count: u32,
    },
    /// Inverse closure was requested on a graph that already contains it.
    AlreadyClosed,
    /// An entity/relation/user/item id exceeds the stored count.
    IndexOutOfRange {
        what: &'static str,
        id: u32,
        count: u32,
    },
    /// Checkpoint bytes do not match the documented layout.
    CheckpointFormat(String),
    /// Checkpoint counts disagree with the ingested dataset or config.
    DimensionMismatch(String),
    /// The dataset cannot support the requested operation (e.g. a user
    /// interacting with every item leaves nothing to sample as a negative).
    DegenerateDataset(String),
    /// A gradient block came back non-finite.
    NonFiniteGradient { block: &'static str },
    /// The finite-difference verification found mismatching coordinates.
    GradientCheck { failures: usize, worst: f64 },
    /// A parameter or intermediate value became non-finite.
    NonFiniteValue(String),
    /// Underlying I/O failure, annotated with the path involved.
    Io { path: PathBuf, source: io::Error },
    /// A required input was empty.
    EmptyInput(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code category: 1 config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFiniteGradient { .. } | Error::NonFiniteValue(_) => 3,
            Error::GradientCheck { .. } => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Parse {
                path,
                line,
                message,
            } => write!(f, "{}:{line}: {message}", path.display()),
            Error::TripleOutOfRange {
                index,
                head,
                relation,
                tail,
                entity_count,
                relation_count,
            } => write!(
                f,
                "triple {index} ({head}, {relation}, {tail}) out of range: \
                 {entity_count} entities, {relation_count} relations"
            ),
            Error::AlreadyClosed => {
                write!(f, "inverse relations were already added to this graph")
            }
            Error::IndexOutOfRange { what, id, count } => {
                write!(f, "{what} id {id} out of range (count {count})")
            }
            Error::CheckpointFormat(msg) => write!(f, "bad checkpoint: {msg}"),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::DegenerateDataset(msg) => write!(f, "degenerate dataset: {msg}"),
            Error::NonFiniteGradient { block } => {
                write!(f, "non-finite gradient in parameter block '{block}'")
            }
            Error::GradientCheck { failures, worst } => write!(
                f,
                "gradient check failed on {failures} coordinates (worst relative error {worst:.3e})"
            ),
            Error::NonFiniteValue(msg) => write!(f, "non-finite value: {msg}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::EmptyInput(msg) => write!(f, "empty input: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
