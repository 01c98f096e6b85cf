use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic header in {0}")]
    BadMagic(String),
    #[error("dimension mismatch: expected {expected} elements, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("tensor contains NaN or infinite values")]
    NonFiniteData,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("{origin}:{line}: {msg}")]
    Parse { origin: String, line: usize, msg: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl DataError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum CameraError {
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum LossError {
    #[error("every pixel is excluded from the photometric loss")]
    AllPixelsExcluded,
    #[error("depth alignment region is empty")]
    EmptyRegion,
    #[error("flow loss cluster has no usable points")]
    EmptyCluster,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum AllocError {
    #[error("sampling map has empty support")]
    EmptySupport,
    #[error("non-positive prior depth {depth} at pixel ({x}, {y})")]
    NonPositiveDepth { x: f64, y: f64, depth: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("degenerate configuration for fundamental matrix: {0}")]
    DegenerateConfiguration(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AppError {
    #[error("unknown point id {0}")]
    UnknownId(u64),
    #[error("too few visible points ({0}) to build a mask")]
    TooFewPoints(usize),
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimMismatch(Vec<usize>, Vec<usize>),
    #[error("trajectory lengths or frame indices differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty selection")]
    EmptySelection,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid scene spec: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Crate-level error; engine failures carry the frame index that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("camera-geometry: {0}")]
    Camera(#[from] CameraError),
    #[error("losses: {0}")]
    Loss(#[from] LossError),
    #[error("allocation: {0}")]
    Alloc(#[from] AllocError),
    #[error("motion-clustering: {0}")]
    Cluster(#[from] ClusterError),
    #[error("apps: {0}")]
    App(#[from] AppError),
    #[error("synthetic-oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("engine: frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("dataset: missing file {0}")]
    MissingFile(PathBuf),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
