use std::path::PathBuf;

use thiserror::Error;

use crate::grad::GradError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{image} is {image_dims:?} but {mask} is {mask_dims:?}")]
    DimensionMismatch {
        image: PathBuf,
        image_dims: (usize, usize),
        mask: PathBuf,
        mask_dims: (usize, usize),
    },
    #[error("illegal grey level {value} at ({row}, {col}) in {path}")]
    IllegalGreyLevel {
        path: PathBuf,
        value: u8,
        row: usize,
        col: usize,
    },
    #[error("cup-to-disk ratio undefined: disk region is empty")]
    UndefinedCdr,
    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {msg}")]
    Csv { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
