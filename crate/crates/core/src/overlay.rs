//! Uncertainty and confidence maps: alpha-blended tile tints over the
//! painting, plus outlines on the extreme tiles.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TileRect;
use crate::ensemble::EnsemblePrediction;

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("{predictions} predictions for {tiles} grid tiles")]
    GridMismatch { tiles: usize, predictions: usize },
    #[error("prediction {index} is for tile {found:?}, grid has {expected:?}")]
    RectMismatch {
        index: usize,
        expected: TileRect,
        found: TileRect,
    },
    #[error("tile {0:?} lies outside the image")]
    OutOfBounds(TileRect),
    #[error("no predictions to annotate")]
    EmptyPredictions,
    #[error("invalid overlay spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlayMode {
    #[default]
    Uncertainty,
    Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlaySpec {
    pub mode: OverlayMode,
    pub alpha_max: f64,
    /// Variance mapped to full opacity.
    pub variance_full_scale: f64,
    pub uncertainty_color: [u8; 3],
    pub above_color: [u8; 3],
    pub below_color: [u8; 3],
    pub outline_color: [u8; 3],
    pub outline_width: u32,
    pub dash_length: u32,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        Self {
            mode: OverlayMode::Uncertainty,
            alpha_max: 0.6,
            variance_full_scale: 0.25,
            uncertainty_color: [255, 0, 0],
            above_color: [0, 255, 0],
            below_color: [255, 0, 0],
            outline_color: [128, 0, 160],
            outline_width: 6,
            dash_length: 24,
        }
    }
}

impl OverlaySpec {
    pub fn validate(&self) -> Result<(), OverlayError> {
        if !(self.alpha_max > 0.0 && self.alpha_max <= 1.0) {
            return Err(OverlayError::InvalidSpec(format!("alpha_max {} not in (0, 1]", self.alpha_max)));
        }
        if !(self.variance_full_scale > 0.0 && self.variance_full_scale.is_finite()) {
            return Err(OverlayError::InvalidSpec("variance_full_scale must be > 0".into()));
        }
        if self.outline_width == 0 || self.dash_length == 0 {
            return Err(OverlayError::InvalidSpec("outline width and dash length must be >= 1".into()));
        }
        Ok(())
    }

    /// Opacity of the uncertainty tint for a tile variance.
    pub fn uncertainty_alpha(&self, variance: f64) -> f64 {
        self.alpha_max * (variance / self.variance_full_scale).min(1.0)
    }

    /// Tint colour and opacity of a tile in the confidence map.
    pub fn confidence_tint(&self, score: f64, threshold: f64) -> ([u8; 3], f64) {
        let (color, side) = if score >= threshold {
            (self.above_color, 1.0 - threshold)
        } else {
            (self.below_color, threshold)
        };
        (color, self.alpha_max * ((score - threshold).abs() / side).min(1.0))
    }
}

/// `(1 − α)·base + α·tint`, rounded.
pub fn blend(base: [u8; 3], tint: [u8; 3], alpha: f64) -> [u8; 3] {
    std::array::from_fn(|c| ((1.0 - alpha) * base[c] as f64 + alpha * tint[c] as f64).round().clamp(0.0, 255.0) as u8)
}

fn check(image: &RgbImage, grid: &[TileRect], preds: &[EnsemblePrediction]) -> Result<(), OverlayError> {
    if grid.len() != preds.len() {
        return Err(OverlayError::GridMismatch {
            tiles: grid.len(),
            predictions: preds.len(),
        });
    }
    for (index, (rect, p)) in grid.iter().zip(preds).enumerate() {
        if p.rect != *rect {
            return Err(OverlayError::RectMismatch {
                index,
                expected: *rect,
                found: p.rect,
            });
        }
        if rect.x as u64 + rect.size as u64 > image.width() as u64 || rect.y as u64 + rect.size as u64 > image.height() as u64 {
            return Err(OverlayError::OutOfBounds(*rect));
        }
    }
    Ok(())
}

/// Paints tiles in grid (row-major) order; every tile blends against the
/// source pixels, so overlaps show the last tile's tint.
fn tint_tiles(image: &RgbImage, grid: &[TileRect], tint: impl Fn(usize) -> ([u8; 3], f64)) -> RgbImage {
    let mut out = image.clone();
    for (i, r) in grid.iter().enumerate() {
        let (color, alpha) = tint(i);
        for y in r.y..r.y + r.size {
            for x in r.x..r.x + r.size {
                let base = image.get_pixel(x, y).0;
                out.put_pixel(x, y, Rgb(blend(base, color, alpha)));
            }
        }
    }
    out
}

/// Red tint with opacity proportional to member variance.
pub fn render_uncertainty(
    image: &RgbImage,
    grid: &[TileRect],
    preds: &[EnsemblePrediction],
    spec: &OverlaySpec,
) -> Result<RgbImage, OverlayError> {
    spec.validate()?;
    check(image, grid, preds)?;
    Ok(tint_tiles(image, grid, |i| (spec.uncertainty_color, spec.uncertainty_alpha(preds[i].variance))))
}

/// Green above τ, red below, with opacity growing with the normalised
/// distance from τ.
pub fn render_confidence(
    image: &RgbImage,
    grid: &[TileRect],
    preds: &[EnsemblePrediction],
    threshold: f64,
    spec: &OverlaySpec,
) -> Result<RgbImage, OverlayError> {
    spec.validate()?;
    check(image, grid, preds)?;
    Ok(tint_tiles(image, grid, |i| spec.confidence_tint(preds[i].score, threshold)))
}

/// Indices of the highest- and lowest-scoring tiles; ties go to the first
/// tile in row-major order.
pub fn extreme_tiles(preds: &[EnsemblePrediction]) -> Option<(usize, usize)> {
    let key = |i: usize| (preds[i].rect.row, preds[i].rect.col);
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by_key(|&i| key(i));
    let mut it = order.into_iter();
    let first = it.next()?;
    let (mut hi, mut lo) = (first, first);
    for i in it {
        if preds[i].score > preds[hi].score {
            hi = i;
        }
        if preds[i].score < preds[lo].score {
            lo = i;
        }
    }
    Some((hi, lo))
}

fn outline(img: &mut RgbImage, r: &TileRect, color: [u8; 3], width: u32, dash: Option<u32>) {
    let width = width.min(r.size / 2);
    let last = r.size - 1;
    for dy in 0..r.size {
        for dx in 0..r.size {
            let edge = dx < width || dy < width || dx > last - width || dy > last - width;
            if !edge {
                continue;
            }
            if let Some(d) = dash {
                // dash phase follows the position along the edge
                let along = if dy < width || dy > last - width { dx } else { dy };
                if (along / d) % 2 == 1 {
                    continue;
                }
            }
            img.put_pixel(r.x + dx, r.y + dy, Rgb(color));
        }
    }
}

/// Solid outline on the highest tile, dashed on the lowest (solid drawn
/// last, so a single tile shows the solid frame).
pub fn annotate_extremes(
    overlay: &RgbImage,
    grid: &[TileRect],
    preds: &[EnsemblePrediction],
    spec: &OverlaySpec,
) -> Result<RgbImage, OverlayError> {
    if preds.is_empty() {
        return Err(OverlayError::EmptyPredictions);
    }
    spec.validate()?;
    check(overlay, grid, preds)?;
    let (hi, lo) = extreme_tiles(preds).expect("non-empty");
    let mut out = overlay.clone();
    outline(&mut out, &grid[lo], spec.outline_color, spec.outline_width, Some(spec.dash_length));
    outline(&mut out, &grid[hi], spec.outline_color, spec.outline_width, None);
    Ok(out)
}

/// Map for `spec.mode` with the extreme tiles outlined.
pub fn render(
    image: &RgbImage,
    grid: &[TileRect],
    preds: &[EnsemblePrediction],
    threshold: f64,
    spec: &OverlaySpec,
) -> Result<RgbImage, OverlayError> {
    let map = match spec.mode {
        OverlayMode::Uncertainty => render_uncertainty(image, grid, preds, spec)?,
        OverlayMode::Confidence => render_confidence(image, grid, preds, threshold, spec)?,
    };
    annotate_extremes(&map, grid, preds, spec)
}
