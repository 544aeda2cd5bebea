use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: unsupported sample type {found} (expected 8-bit unsigned or 32-bit float)")]
    UnsupportedSampleType { path: PathBuf, found: String },

    #[error("{0}: missing geotransform (ModelPixelScale/ModelTiepoint tags)")]
    MissingGeotransform(PathBuf),

    #[error("rotated geotransform is not supported (rotation terms {0}, {1})")]
    RotatedGeotransform(f64, f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: tiff: {source}")]
    Tiff {
        path: PathBuf,
        #[source]
        source: tiff::TiffError,
    },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("georeference mismatch: {0}")]
    GeoreferenceMismatch(String),

    #[error("raster {width}x{height} is not a multiple of tile size {tile_size}; pad first")]
    NotTileMultiple {
        width: usize,
        height: usize,
        tile_size: usize,
    },

    #[error("inconsistent tile at row {row}, col {col}: {reason}")]
    InconsistentTile {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("missing tile at row {row}, col {col}")]
    MissingTile { row: usize, col: usize },

    #[error("band index {index} out of range for raster with {bands} band(s)")]
    BandOutOfRange { index: usize, bands: usize },

    #[error("invalid band assignment: {0}")]
    InvalidBands(String),

    #[error("class map: {0}")]
    ClassMap(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassIndexOutOfRange { index: u8, classes: usize },

    #[error("{path}: csv: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("unpaired tile: {0}")]
    UnpairedTile(PathBuf),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("split policy: {0}")]
    Policy(String),

    #[error("invalid scene spec: {0}")]
    InvalidScene(String),

    #[error("{path}: json: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
