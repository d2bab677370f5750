use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("vehicle stalled at grid point {index} (s = {s:.1} m)")]
    Stall { index: usize, s: f64 },

    #[error("apex speed unreachable before curve at grid point {index} (s = {s:.1} m): {speed:.3} m/s > {limit:.3} m/s")]
    InfeasibleApex {
        index: usize,
        s: f64,
        speed: f64,
        limit: f64,
    },

    #[error("empty free-sector multiset for car {car}, sector {sector}")]
    EmptyDistribution { car: u32, sector: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("decision tree is malformed: {0}")]
    Structure(String),

    #[error("no feasible individual found: {0}")]
    NoFeasible(String),

    #[error("missing artifact {path}: run {command} first")]
    MissingArtifact { path: PathBuf, command: String },

    #[error("output directory {0} is locked by another invocation")]
    Locked(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    StdIo(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
