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

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error at row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("no data rows")]
    NoData,

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("constant feature '{0}'")]
    ConstantFeature(String),

    #[error("class {label} has {available} points, {requested} requested")]
    InsufficientClass {
        label: u8,
        available: usize,
        requested: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero total variance")]
    ZeroVariance,

    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),

    #[error("k_pe = {k_pe} exceeds n - n_components = {n} - {n_components}")]
    TooManyEigenvectors {
        k_pe: usize,
        n: usize,
        n_components: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {0}")]
    Diverged(usize),

    #[error("single class present; both labels are required")]
    SingleClass,

    #[error("constant field")]
    ConstantField,

    #[error("no neighbors")]
    NoNeighbors,

    #[error("empty mask")]
    EmptyMask,

    #[error("too few distinct values: {distinct} < {k}")]
    TooFewDistinct { distinct: usize, k: usize },

    #[error("missing replacement for point id {0}")]
    MissingReplacement(i64),

    #[error("zero in-extent track length")]
    NoTrackInExtent,

    #[error("raster has no valid cells")]
    AllNodata,

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("raster format error: {0}")]
    Raster(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
