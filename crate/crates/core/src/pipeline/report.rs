use serde::{Deserialize, Serialize};

use crate::corpus::TileRect;
use crate::ensemble::{Decision, EnsemblePrediction, ImageVerdict, MEMBERS};
use crate::overlay::extreme_tiles;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub rect: TileRect,
    pub member_probs: [f64; MEMBERS],
    pub mean: f64,
    pub variance: f64,
}

/// Tile stems (`r<row>_c<col>`) of the highest and lowest tile scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeTiles {
    pub highest: String,
    pub lowest: String,
}

/// Machine-readable result of scoring one artwork.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub artwork_id: String,
    pub decision: Decision,
    pub image_prob: f64,
    pub threshold: f64,
    pub tiles_total: usize,
    pub tiles_positive: usize,
    pub tiles: Vec<TileRecord>,
    pub extreme_tiles: ExtremeTiles,
    /// SHA-256 of the `ensemble.json` that produced the scores.
    pub digest: String,
    pub version: String,
    /// RFC 3339, UTC. The only field that differs between identical runs.
    pub timestamp: String,
}

impl AnalysisReport {
    pub fn from_verdict(verdict: &ImageVerdict, threshold: f64, digest: String, timestamp: String) -> Self {
        let (hi, lo) = extreme_tiles(&verdict.tiles).expect("verdicts always hold tiles");
        Self {
            artwork_id: verdict.artwork_id.clone(),
            decision: verdict.decision,
            image_prob: verdict.image_prob,
            threshold,
            tiles_total: verdict.tiles_total,
            tiles_positive: verdict.tiles_positive,
            tiles: verdict
                .tiles
                .iter()
                .map(|p: &EnsemblePrediction| TileRecord {
                    rect: p.rect,
                    member_probs: p.member_probs,
                    mean: p.mean,
                    variance: p.variance,
                })
                .collect(),
            extreme_tiles: ExtremeTiles {
                highest: verdict.tiles[hi].rect.stem(),
                lowest: verdict.tiles[lo].rect.stem(),
            },
            digest,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
        }
    }

    pub fn grid(&self) -> Vec<TileRect> {
        self.tiles.iter().map(|t| t.rect).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{aggregate_image, Fusion};

    #[test]
    fn json_round_trip() {
        let preds: Vec<_> = (0..3)
            .map(|c| {
                let rect = TileRect {
                    row: 0,
                    col: c,
                    x: c * 512,
                    y: 0,
                    size: 512,
                };
                let p = 0.1 + 0.3 * c as f64;
                EnsemblePrediction::new("w", rect, [p, p + 0.01, p - 0.01, p, 1.0 / 3.0], 0.5, Fusion::Mean).unwrap()
            })
            .collect();
        let v = aggregate_image(&preds, 0.5).unwrap();
        let r = AnalysisReport::from_verdict(&v, 0.5, "abc".into(), "2024-01-01T00:00:00Z".into());
        assert_eq!(r.extreme_tiles.highest, "r0_c2");
        assert_eq!(r.extreme_tiles.lowest, "r0_c0");
        let text = serde_json::to_string_pretty(&r).unwrap();
        let back: AnalysisReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
