//! Synthetic data, image files, manifests, run configuration and
//! checkpoints.

mod checkpoint;
mod config;
mod dataset;
mod pgm;
mod raster;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{RunConfig, CONFIG_ENV};
pub use dataset::{load_dataset, write_manifest, Dataset, ManifestRecord, Split};
pub use pgm::{read_image, read_pgm, write_pgm};
pub use raster::{glyph_bitmap, layout, rasterize, Placement};
pub use synth::{synth_dataset, synth_expression, SynthConfig};

use std::path::PathBuf;

use thiserror::Error;

use crate::grammar::GrammarError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("cannot decode image {}: {message}", path.display())]
    ImageDecode { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("expression needs {needed_height}x{needed_width} pixels, canvas is {height}x{width}")]
    CanvasOverflow {
        needed_height: usize,
        needed_width: usize,
        height: usize,
        width: usize,
    },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid synthesis setting: {0}")]
    Synth(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl From<NumericsError> for DataError {
    fn from(e: NumericsError) -> Self {
        DataError::Model(ModelError::Numerics(e))
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::FileNotFound(path.to_path_buf())
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}
