//! Tile classifiers: the pluggable probability-emitter interface, the
//! handcrafted-feature reference model, its training loop and the
//! augmentation battery.

mod augment;
mod classifier;
mod features;
mod network;

use std::path::PathBuf;

use thiserror::Error;

pub use augment::{augment, augment_image, AugmentParams, Range};
pub use classifier::{
    train_classifier, Normalizer, TileClassifier, TileModel, TrainConfig, TrainingMeta, MODEL_FORMAT, MODEL_VERSION,
};
pub use features::{
    extract_features, FeatureVector, BANDPASS_RANGE, COOCCURRENCE_RANGE, FEATURE_DIM, HIST_BINS, HIST_RANGE,
    ORIENTATION_BINS, ORIENTATION_RANGE, VARIANCE_RANGE,
};
pub use network::{bce_with_logit, sigmoid, Adam, AdamConfig, Mlp};

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("tile must be 512x512 RGB, got {width}x{height}")]
    BadTileShape { width: u32, height: u32 },
    #[error("feature vector has length {found}, expected {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training data contains only {0} tiles; both classes are required")]
    SingleClassData(crate::corpus::Label),
    #[error("training data is empty")]
    EmptyTrainingSet,
    #[error("loss became non-finite in epoch {epoch} (last finite epoch loss {last_loss:?})")]
    NonFiniteLoss { epoch: usize, last_loss: Option<f64> },
    #[error("classifier has not been trained")]
    UntrainedClassifier,
    #[error("invalid model file: {0}")]
    ModelFormat(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
