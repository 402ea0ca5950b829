//! Tile- and image-level accuracy, confusion counts and ensemble agreement.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, TileSample};
use crate::ensemble::{aggregate_image, Decision, Ensemble, EnsembleError, EnsemblePrediction};

/// Bins of the variance histogram over [0, 0.25].
pub const VARIANCE_BINS: usize = 10;
const VARIANCE_MAX: f64 = 0.25;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("split contains no tiles")]
    EmptySplit,
    #[error("no predictions given")]
    EmptyInput,
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted_positive: bool, label: Label) {
        match (predicted_positive, label) {
            (true, Label::Positive) => self.tp += 1,
            (true, Label::Negative) => self.fp += 1,
            (false, Label::Negative) => self.tn += 1,
            (false, Label::Positive) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn correct(&self) -> usize {
        self.tp + self.tn
    }

    /// (TP + TN) / total, or 0 when empty.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

/// One image row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub artwork_id: String,
    pub label: Label,
    pub image_prob: f64,
    pub tiles_total: usize,
    pub tiles_positive: usize,
    pub decision: Decision,
    pub correct: bool,
    /// Auxiliary tile-majority decision: more than half the tiles ≥ τ.
    pub majority_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub threshold: f64,
    pub tile_accuracy: f64,
    pub image_accuracy: f64,
    pub tile_confusion: Confusion,
    pub image_confusion: Confusion,
    /// Image accuracy under the tile-majority rule.
    pub majority_accuracy: f64,
    pub mean_variance: f64,
    pub verdicts: Vec<VerdictRow>,
}

impl EvaluationReport {
    /// Plain-text summary table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "threshold        {:.4}", self.threshold);
        let _ = writeln!(
            s,
            "tile accuracy    {:.4}  ({}/{})",
            self.tile_accuracy,
            self.tile_confusion.correct(),
            self.tile_confusion.total()
        );
        let _ = writeln!(
            s,
            "image accuracy   {:.4}  ({}/{})",
            self.image_accuracy,
            self.image_confusion.correct(),
            self.image_confusion.total()
        );
        let _ = writeln!(s, "majority acc.    {:.4}", self.majority_accuracy);
        let _ = writeln!(s, "mean variance    {:.6}", self.mean_variance);
        for (name, c) in [("tile", &self.tile_confusion), ("image", &self.image_confusion)] {
            let _ = writeln!(s, "{name:<6} TP {:>5}  FP {:>5}  TN {:>5}  FN {:>5}", c.tp, c.fp, c.tn, c.fn_);
        }
        let _ = writeln!(
            s,
            "\n{:<24} {:<8} {:>8} {:>9} {:<22} {:>8} {:>7}",
            "artwork", "label", "prob", "pos/all", "decision", "majority", "correct"
        );
        for v in &self.verdicts {
            let _ = writeln!(
                s,
                "{:<24} {:<8} {:>8.4} {:>9} {:<22} {:>8} {:>7}",
                v.artwork_id,
                v.label.as_str(),
                v.image_prob,
                format!("{}/{}", v.tiles_positive, v.tiles_total),
                v.decision.to_string(),
                if v.majority_positive { "pos" } else { "neg" },
                if v.correct { "yes" } else { "no" }
            );
        }
        s
    }
}

/// Scores labelled tile predictions. Image verdicts come from the mean tile
/// score, re-derived here from the raw predictions.
pub fn evaluate_predictions(
    predictions: &[(EnsemblePrediction, Label)],
    threshold: f64,
) -> Result<EvaluationReport, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptySplit);
    }
    let mut tile_confusion = Confusion::default();
    let mut by_artwork: BTreeMap<&str, (Label, Vec<EnsemblePrediction>)> = BTreeMap::new();
    for (p, label) in predictions {
        tile_confusion.record(p.score >= threshold, *label);
        by_artwork
            .entry(p.artwork_id.as_str())
            .or_insert_with(|| (*label, Vec::new()))
            .1
            .push(p.clone());
    }

    let mut image_confusion = Confusion::default();
    let mut majority = Confusion::default();
    let mut verdicts = Vec::with_capacity(by_artwork.len());
    for (label, preds) in by_artwork.into_values() {
        let v = aggregate_image(&preds, threshold)?;
        let positive = v.decision.is_positive();
        let majority_positive = 2 * v.tiles_positive > v.tiles_total;
        image_confusion.record(positive, label);
        majority.record(majority_positive, label);
        verdicts.push(VerdictRow {
            artwork_id: v.artwork_id,
            label,
            image_prob: v.image_prob,
            tiles_total: v.tiles_total,
            tiles_positive: v.tiles_positive,
            decision: v.decision,
            correct: positive == (label == Label::Positive),
            majority_positive,
        });
    }

    Ok(EvaluationReport {
        threshold,
        tile_accuracy: tile_confusion.accuracy(),
        image_accuracy: image_confusion.accuracy(),
        tile_confusion,
        image_confusion,
        majority_accuracy: majority.accuracy(),
        mean_variance: predictions.iter().map(|(p, _)| p.variance).sum::<f64>() / predictions.len() as f64,
        verdicts,
    })
}

/// Predicts every tile with the ensemble and scores the result.
pub fn evaluate(ensemble: &Ensemble, tiles: &[TileSample]) -> Result<EvaluationReport, MetricsError> {
    if tiles.is_empty() {
        return Err(MetricsError::EmptySplit);
    }
    let preds = ensemble.predict_tiles(tiles)?;
    let labelled: Vec<_> = preds.into_iter().zip(tiles.iter().map(|t| t.label)).collect();
    evaluate_predictions(&labelled, ensemble.threshold())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub tiles: usize,
    pub mean_variance: f64,
    /// Fraction of tiles whose members agree exactly.
    pub unanimous_fraction: f64,
    /// Tile counts over ten equal variance bins of [0, 0.25].
    pub histogram: [usize; VARIANCE_BINS],
}

pub fn agreement_stats(predictions: &[EnsemblePrediction]) -> Result<AgreementStats, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut histogram = [0usize; VARIANCE_BINS];
    let mut unanimous = 0;
    for p in predictions {
        let bin = ((p.variance / VARIANCE_MAX) * VARIANCE_BINS as f64) as usize;
        histogram[bin.min(VARIANCE_BINS - 1)] += 1;
        unanimous += (p.variance == 0.0) as usize;
    }
    let n = predictions.len() as f64;
    Ok(AgreementStats {
        tiles: predictions.len(),
        mean_variance: predictions.iter().map(|p| p.variance).sum::<f64>() / n,
        unanimous_fraction: unanimous as f64 / n,
        histogram,
    })
}
