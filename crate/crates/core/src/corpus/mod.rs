//! Corpus curation: manifest ingestion, quality control, tiling and
//! group-aware splitting.
//!
//! Everything in here is a pure function of its inputs (plus a seed for
//! splitting), so artworks can be processed concurrently.

mod manifest;
mod quality;
mod split;
mod tiling;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::load_manifest;
pub use quality::{quality_check, QcConfig, QualityReport};
pub use split::{split_corpus, Split, SplitAssignment, SplitCounts, SplitRatios};
pub use tiling::{extract_tiles, tile_grid, TileRect, TileSample, TILE_SIZE};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("duplicate artwork_id {0:?}")]
    DuplicateId(String),
    #[error("image for {artwork_id:?} not found at {path}")]
    MissingImageFile { artwork_id: String, path: PathBuf },
    #[error("image is {found_w}x{found_h}, record says {expected_w}x{expected_h}")]
    DimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },
    #[error("image {width}x{height} is smaller than one {TILE_SIZE}px tile")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("tile rect at ({x},{y}) exceeds image bounds {width}x{height}")]
    RectOutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("class {0} has no eligible works")]
    ClassMissing(Label),
    #[error("too few works to split: {0}")]
    TooFewWorks(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to decode image {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
}

/// Class of an artwork: the target artist or a comparative one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }

    /// Training target for binary cross-entropy.
    pub fn target(self) -> f64 {
        match self {
            Label::Negative => 0.0,
            Label::Positive => 1.0,
        }
    }

    pub fn from_target(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Attribution certainty. Only `Certain1` works may enter a training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Certainty {
    #[serde(rename = "1")]
    Certain1,
    #[serde(rename = "disputed")]
    Disputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtworkRecord {
    pub artwork_id: String,
    pub title: String,
    pub label: Label,
    pub certainty: Certainty,
    pub image_path: PathBuf,
    pub px_per_mm: f64,
    pub width_px: u32,
    pub height_px: u32,
}

impl ArtworkRecord {
    pub fn is_trainable(&self) -> bool {
        self.certainty == Certainty::Certain1
    }

    /// Loads the record's image as 8-bit RGB and checks it against the
    /// recorded dimensions.
    pub fn load_image(&self) -> Result<RgbImage, CorpusError> {
        let img = load_rgb(&self.image_path)?;
        check_dimensions(self, &img)?;
        Ok(img)
    }
}

/// Reads a PNG or TIFF as 8-bit RGB. Grayscale is replicated to three
/// channels; alpha is dropped.
pub fn load_rgb(path: &Path) -> Result<RgbImage, CorpusError> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        },
        source => CorpusError::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    Ok(img.to_rgb8())
}

pub(crate) fn check_dimensions(record: &ArtworkRecord, img: &RgbImage) -> Result<(), CorpusError> {
    if img.width() != record.width_px || img.height() != record.height_px {
        return Err(CorpusError::DimensionMismatch {
            expected_w: record.width_px,
            expected_h: record.height_px,
            found_w: img.width(),
            found_h: img.height(),
        });
    }
    Ok(())
}
