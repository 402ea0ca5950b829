//! Five-member ensemble: training, per-tile fusion, threshold calibration
//! and image-level aggregation.

mod calibrate;
mod fixture;
mod store;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{extract_features, train_classifier, BackboneError, TileClassifier, TrainConfig};
use crate::corpus::{Label, TileRect, TileSample};

pub use calibrate::{balanced_accuracy, sweep_threshold, Calibration, CandidateScore};
pub use fixture::{Fixture, FixtureExpectation, REFERENCE_THRESHOLD};
pub use store::{EnsembleManifest, MemberEntry, ENSEMBLE_FILE, ENSEMBLE_FORMAT};

/// Number of ensemble members.
pub const MEMBERS: usize = 5;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("an ensemble needs exactly {MEMBERS} members, got {0}")]
    MemberCount(usize),
    #[error("member {0} is untrained")]
    UntrainedMember(usize),
    #[error("threshold {0} is outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("no tile predictions to aggregate")]
    EmptyTileList,
    #[error("tile predictions mix artworks {first:?} and {other:?}")]
    MixedArtworks { first: String, other: String },
    #[error("validation data has no {0} tiles")]
    ClassMissing(Label),
    #[error("calibration found no informative threshold (best candidate {0})")]
    DegenerateThreshold(f64),
    #[error("member probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error("invalid ensemble file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// How member probabilities are fused into the tile score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Mean,
    Median,
    /// Fraction of members at or above 0.5.
    Vote,
}

impl Fusion {
    pub fn fuse(self, probs: &[f64; MEMBERS]) -> f64 {
        match self {
            Fusion::Mean => mean(probs),
            Fusion::Median => {
                let mut s = *probs;
                s.sort_by(f64::total_cmp);
                s[MEMBERS / 2]
            }
            Fusion::Vote => probs.iter().filter(|&&p| p >= 0.5).count() as f64 / MEMBERS as f64,
        }
    }
}

fn mean(probs: &[f64; MEMBERS]) -> f64 {
    probs.iter().sum::<f64>() / MEMBERS as f64
}

/// Population variance of the member outputs.
fn variance(probs: &[f64; MEMBERS], mean: f64) -> f64 {
    probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / MEMBERS as f64
}

/// Fused prediction for one tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub artwork_id: String,
    pub rect: TileRect,
    pub member_probs: [f64; MEMBERS],
    pub mean: f64,
    pub variance: f64,
    /// Score compared against τ. Equals `mean` under the default fusion.
    pub score: f64,
    pub above_threshold: bool,
}

impl EnsemblePrediction {
    pub fn new(
        artwork_id: impl Into<String>,
        rect: TileRect,
        member_probs: [f64; MEMBERS],
        threshold: f64,
        fusion: Fusion,
    ) -> Result<Self, EnsembleError> {
        if let Some(&p) = member_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(EnsembleError::InvalidProbability(p));
        }
        let mean = mean(&member_probs);
        let score = match fusion {
            Fusion::Mean => mean,
            other => other.fuse(&member_probs),
        };
        Ok(Self {
            artwork_id: artwork_id.into(),
            rect,
            member_probs,
            mean,
            variance: variance(&member_probs, mean),
            score,
            above_threshold: score >= threshold,
        })
    }

    /// Re-evaluates the threshold flag for a different τ.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.above_threshold = self.score >= threshold;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    ConsistentWithArtist,
    Inconsistent,
}

impl Decision {
    pub fn is_positive(self) -> bool {
        self == Decision::ConsistentWithArtist
    }
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::ConsistentWithArtist => "consistent with artist",
            Decision::Inconsistent => "inconsistent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageVerdict {
    pub artwork_id: String,
    /// Mean of the tile scores.
    pub image_prob: f64,
    pub tiles_total: usize,
    pub tiles_positive: usize,
    pub decision: Decision,
    pub tiles: Vec<EnsemblePrediction>,
}

/// Averages tile scores into an image verdict. Both tile and image decisions
/// use `score >= threshold`.
pub fn aggregate_image(tile_preds: &[EnsemblePrediction], threshold: f64) -> Result<ImageVerdict, EnsembleError> {
    let first = tile_preds.first().ok_or(EnsembleError::EmptyTileList)?;
    if let Some(other) = tile_preds.iter().find(|p| p.artwork_id != first.artwork_id) {
        return Err(EnsembleError::MixedArtworks {
            first: first.artwork_id.clone(),
            other: other.artwork_id.clone(),
        });
    }
    // sorted summation keeps the verdict independent of tile order
    let mut scores: Vec<f64> = tile_preds.iter().map(|p| p.score).collect();
    scores.sort_by(f64::total_cmp);
    let image_prob = scores.iter().sum::<f64>() / scores.len() as f64;
    let tiles_positive = scores.iter().filter(|&&s| s >= threshold).count();
    Ok(ImageVerdict {
        artwork_id: first.artwork_id.clone(),
        image_prob,
        tiles_total: tile_preds.len(),
        tiles_positive,
        decision: if image_prob >= threshold {
            Decision::ConsistentWithArtist
        } else {
            Decision::Inconsistent
        },
        tiles: tile_preds.iter().cloned().map(|p| p.with_threshold(threshold)).collect(),
    })
}

/// Trains member `i` with seed `base_seed + i`.
pub fn train_ensemble(
    tiles: &[TileSample],
    config: &TrainConfig,
    base_seed: u64,
) -> Result<Vec<TileClassifier>, EnsembleError> {
    (0..MEMBERS as u64)
        .into_par_iter()
        .map(|i| {
            log::info!("training member {i} (seed {})", base_seed.wrapping_add(i));
            train_classifier(tiles, config, base_seed.wrapping_add(i)).map_err(EnsembleError::from)
        })
        .collect()
}

/// Trained members plus the decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<TileClassifier>,
    threshold: f64,
    base_seed: u64,
    fusion: Fusion,
    calibration: Option<Calibration>,
}

impl Ensemble {
    pub fn new(members: Vec<TileClassifier>, threshold: f64, base_seed: u64) -> Result<Self, EnsembleError> {
        if members.len() != MEMBERS {
            return Err(EnsembleError::MemberCount(members.len()));
        }
        if let Some(i) = members.iter().position(|m| !m.is_trained()) {
            return Err(EnsembleError::UntrainedMember(i));
        }
        check_threshold(threshold)?;
        Ok(Self {
            members,
            threshold,
            base_seed,
            fusion: Fusion::Mean,
            calibration: None,
        })
    }

    /// Trains five members and starts with τ = 0.5 until calibrated.
    pub fn train(tiles: &[TileSample], config: &TrainConfig, base_seed: u64) -> Result<Self, EnsembleError> {
        Self::new(train_ensemble(tiles, config, base_seed)?, 0.5, base_seed)
    }

    pub fn members(&self) -> &[TileClassifier] {
        &self.members
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn fusion(&self) -> Fusion {
        self.fusion
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    pub fn with_fusion(mut self, fusion: Fusion) -> Self {
        self.fusion = fusion;
        self
    }

    /// Overrides τ, e.g. with a fixed value from the configuration.
    pub fn set_threshold(&mut self, threshold: f64) -> Result<(), EnsembleError> {
        check_threshold(threshold)?;
        self.threshold = threshold;
        Ok(())
    }

    /// Member probabilities for one tile; features are extracted once.
    pub fn member_probs(&self, tile: &TileSample) -> Result<[f64; MEMBERS], EnsembleError> {
        let features = extract_features(&tile.pixels)?;
        let mut out = [0.0; MEMBERS];
        for (i, (slot, m)) in out.iter_mut().zip(&self.members).enumerate() {
            *slot = m.predict_features(&features).map_err(|e| match e {
                BackboneError::UntrainedClassifier => EnsembleError::UntrainedMember(i),
                e => e.into(),
            })?;
        }
        Ok(out)
    }

    pub fn predict_tile(&self, tile: &TileSample) -> Result<EnsemblePrediction, EnsembleError> {
        let probs = self.member_probs(tile)?;
        EnsemblePrediction::new(tile.artwork_id.clone(), tile.rect, probs, self.threshold, self.fusion)
    }

    /// Predicts every tile in parallel; output order follows input order.
    pub fn predict_tiles(&self, tiles: &[TileSample]) -> Result<Vec<EnsemblePrediction>, EnsembleError> {
        tiles.par_iter().map(|t| self.predict_tile(t)).collect()
    }

    /// Chooses τ on labelled validation tiles and stores the search trace.
    pub fn calibrate(&mut self, validation: &[TileSample]) -> Result<&Calibration, EnsembleError> {
        let preds = self.predict_tiles(validation)?;
        let scored: Vec<(f64, Label)> = preds.iter().zip(validation).map(|(p, t)| (p.score, t.label)).collect();
        let cal = sweep_threshold(&scored)?;
        if cal.threshold <= 0.0 || cal.threshold >= 1.0 {
            return Err(EnsembleError::DegenerateThreshold(cal.threshold));
        }
        self.threshold = cal.threshold;
        Ok(self.calibration.insert(cal))
    }

    pub(crate) fn from_stored(
        members: Vec<TileClassifier>,
        threshold: f64,
        base_seed: u64,
        fusion: Fusion,
        calibration: Option<Calibration>,
    ) -> Result<Self, EnsembleError> {
        let mut e = Self::new(members, threshold, base_seed)?;
        e.fusion = fusion;
        e.calibration = calibration;
        Ok(e)
    }
}

fn check_threshold(t: f64) -> Result<(), EnsembleError> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(EnsembleError::InvalidThreshold(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(i: u32) -> TileRect {
        TileRect {
            row: 0,
            col: i,
            x: i * 512,
            y: 0,
            size: 512,
        }
    }

    fn pred(id: &str, i: u32, probs: [f64; 5], tau: f64) -> EnsemblePrediction {
        EnsemblePrediction::new(id, rect(i), probs, tau, Fusion::Mean).unwrap()
    }

    #[test]
    fn unanimous_members() {
        let p = pred("a", 0, [0.6; 5], 0.5);
        assert!((p.mean - 0.6).abs() < 1e-15);
        assert_eq!(p.variance, 0.0);
    }

    #[test]
    fn split_members_variance() {
        let p = pred("a", 0, [0.0, 1.0, 0.0, 1.0, 0.0], 0.5);
        assert!((p.mean - 0.4).abs() < 1e-15);
        assert!((p.variance - 0.24).abs() < 1e-15);
        assert!(!p.above_threshold);
    }

    #[test]
    fn boundary_counts_as_above() {
        assert!(pred("a", 0, [0.61; 5], REFERENCE_THRESHOLD).above_threshold);
        let p = pred("a", 0, [0.25; 5], 0.25);
        assert!(p.above_threshold);
    }

    #[test]
    fn rejects_out_of_range_probability() {
        let r = EnsemblePrediction::new("a", rect(0), [0.5, 0.5, 1.5, 0.5, 0.5], 0.5, Fusion::Mean);
        assert!(matches!(r, Err(EnsembleError::InvalidProbability(_))));
    }

    #[test]
    fn fusion_rules() {
        let probs = [0.1, 0.9, 0.6, 0.7, 0.2];
        assert!((Fusion::Mean.fuse(&probs) - 0.5).abs() < 1e-15);
        assert_eq!(Fusion::Median.fuse(&probs), 0.6);
        assert_eq!(Fusion::Vote.fuse(&probs), 0.6);
    }

    #[test]
    fn saturated_image() {
        let preds: Vec<_> = (0..4).map(|i| pred("a", i, [1.0; 5], 0.6)).collect();
        let v = aggregate_image(&preds, 0.6).unwrap();
        assert_eq!(v.image_prob, 1.0);
        assert_eq!(v.tiles_positive, 4);
        assert_eq!(v.decision, Decision::ConsistentWithArtist);
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate_image(&[], 0.5), Err(EnsembleError::EmptyTileList)));
        let mixed = [pred("a", 0, [0.5; 5], 0.5), pred("b", 1, [0.5; 5], 0.5)];
        assert!(matches!(aggregate_image(&mixed, 0.5), Err(EnsembleError::MixedArtworks { .. })));
    }

    #[test]
    fn ensemble_requires_five_trained_members() {
        let untrained: Vec<_> = (0..5).map(|s| TileClassifier::untrained(4, s)).collect();
        assert!(matches!(
            Ensemble::new(untrained[..4].to_vec(), 0.5, 0),
            Err(EnsembleError::MemberCount(4))
        ));
        assert!(matches!(
            Ensemble::new(untrained, 0.5, 0),
            Err(EnsembleError::UntrainedMember(0))
        ));
    }
}
