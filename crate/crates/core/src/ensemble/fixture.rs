use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Decision, EnsembleError, EnsemblePrediction, Fusion, MEMBERS};
use crate::corpus::{TileRect, TILE_SIZE};

/// Decision threshold reported for the reference Rubens deployment.
pub const REFERENCE_THRESHOLD: f64 = 0.6080;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureExpectation {
    pub image_prob: f64,
    pub tiles_total: usize,
    pub tiles_positive: usize,
    pub decision: Decision,
}

/// Recorded member outputs for one artwork plus the summary they must
/// reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub artwork_id: String,
    pub title: String,
    pub threshold: f64,
    /// Grid width used to lay the tiles out row-major.
    pub columns: u32,
    pub tiles: Vec<[f64; MEMBERS]>,
    pub expected: FixtureExpectation,
}

impl Fixture {
    pub fn load(path: &Path) -> Result<Self, EnsembleError> {
        let bytes = fs::read(path).map_err(|source| EnsembleError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| EnsembleError::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn rect(&self, index: usize) -> TileRect {
        let (row, col) = (index as u32 / self.columns, index as u32 % self.columns);
        TileRect {
            row,
            col,
            x: col * TILE_SIZE,
            y: row * TILE_SIZE,
            size: TILE_SIZE,
        }
    }

    pub fn predictions(&self, threshold: f64) -> Result<Vec<EnsemblePrediction>, EnsembleError> {
        self.tiles
            .iter()
            .enumerate()
            .map(|(i, probs)| EnsemblePrediction::new(self.artwork_id.clone(), self.rect(i), *probs, threshold, Fusion::Mean))
            .collect()
    }
}
