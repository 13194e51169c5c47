//! CNN-BiLSTM per-frame regressor.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{Archive, ArchiveHeader, TensorEntry, ARCHIVE_FORMAT_VERSION};
pub use config::{BlockShape, ModelConfig, Variant, AUX_PAW_SCALE};
pub use model::{BnUpdate, FrameBatch, Forward, LayerInfo, LayerKind, Model};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint: {0}")]
    Format(String),
}
