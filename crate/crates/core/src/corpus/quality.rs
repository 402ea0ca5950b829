use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{check_dimensions, ArtworkRecord, CorpusError};

/// Thresholds for the automatic quality gate. The defaults are operational
/// choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    /// Minimum physical sampling density.
    pub min_px_per_mm: f64,
    /// Maximum fraction of saturated (glare) pixels.
    pub glare_max: f64,
    /// Maximum mean high-frequency residual, in [0, 1] channel units.
    pub noise_max: f64,
    /// A pixel is glare when every channel is at or above this fraction of
    /// the channel range.
    pub saturation_level: f64,
    /// Opposite frame edges may deviate from parallel by at most this many
    /// degrees.
    pub max_skew_deg: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            min_px_per_mm: 4.5,
            glare_max: 0.05,
            noise_max: 0.15,
            saturation_level: 0.98,
            max_skew_deg: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub artwork_id: String,
    pub resolution_ok: bool,
    pub glare_fraction: f64,
    pub noise_score: f64,
    pub distortion_flag: bool,
    pub passed: bool,
}

pub fn quality_check(record: &ArtworkRecord, image: &RgbImage, config: &QcConfig) -> Result<QualityReport, CorpusError> {
    check_dimensions(record, image)?;
    let resolution_ok = record.px_per_mm >= config.min_px_per_mm;
    let glare_fraction = glare_fraction(image, config.saturation_level);
    let noise_score = noise_score(image);
    let distortion_flag = frame_skew_deg(image).is_some_and(|deg| deg > config.max_skew_deg);
    let passed =
        resolution_ok && glare_fraction <= config.glare_max && noise_score <= config.noise_max && !distortion_flag;
    Ok(QualityReport {
        artwork_id: record.artwork_id.clone(),
        resolution_ok,
        glare_fraction,
        noise_score,
        distortion_flag,
        passed,
    })
}

pub(crate) fn glare_fraction(image: &RgbImage, saturation_level: f64) -> f64 {
    let n = image.width() as usize * image.height() as usize;
    if n == 0 {
        return 0.0;
    }
    let level = (saturation_level * 255.0).ceil().clamp(0.0, 255.0) as u8;
    let saturated = image.pixels().filter(|p| p.0.iter().all(|&c| c >= level)).count();
    saturated as f64 / n as f64
}

/// Mean absolute difference between the image and its 3×3 box blur over
/// all channel samples, scaled to [0, 1]. Borders replicate edge pixels.
pub(crate) fn noise_score(image: &RgbImage) -> f64 {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return 0.0;
    }
    let raw = image.as_raw();
    let mut total = 0.0f64;
    let mut rowsum = vec![0u32; w * 3];
    let mut rows: [Vec<u32>; 3] = [vec![0; w * 3], vec![0; w * 3], vec![0; w * 3]];
    let horizontal = |y: usize, out: &mut Vec<u32>| {
        let line = &raw[y * w * 3..(y + 1) * w * 3];
        for x in 0..w {
            let l = x.saturating_sub(1);
            let r = (x + 1).min(w - 1);
            for c in 0..3 {
                out[x * 3 + c] = line[l * 3 + c] as u32 + line[x * 3 + c] as u32 + line[r * 3 + c] as u32;
            }
        }
    };
    for y in 0..h {
        let ys = [y.saturating_sub(1), y, (y + 1).min(h - 1)];
        for (slot, &yy) in rows.iter_mut().zip(ys.iter()) {
            horizontal(yy, slot);
        }
        for i in 0..w * 3 {
            rowsum[i] = rows[0][i] + rows[1][i] + rows[2][i];
        }
        let line = &raw[y * w * 3..(y + 1) * w * 3];
        let mut acc = 0.0f64;
        for i in 0..w * 3 {
            acc += (line[i] as f64 - rowsum[i] as f64 / 9.0).abs();
        }
        total += acc;
    }
    total / (w * h * 3) as f64 / 255.0
}

/// Minimum luminance step that counts as a frame edge.
const EDGE_CONTRAST: f64 = 24.0;
/// Frame edges are searched within this fraction of each side.
const EDGE_MARGIN: f64 = 0.2;
const BANDS: usize = 8;
/// Edge points further than this (RMS, px) from their fitted line are
/// texture, not a frame.
const MAX_EDGE_RESIDUAL: f64 = 2.0;

/// Estimates how far opposite outer frame edges deviate from parallel, in
/// degrees. Each edge is located per band by the strongest luminance step
/// near the border and fitted with a line; `None` when no opposite pair of
/// edges is visible.
pub(crate) fn frame_skew_deg(image: &RgbImage) -> Option<f64> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < 8 || h < 8 {
        return None;
    }
    let lum: Vec<f64> = image
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let at = |x: usize, y: usize| lum[y * w + x];

    let vertical_pair = edge_pair(w, h, |along, across| at(across, along));
    let horizontal_pair = edge_pair(h, w, |along, across| at(along, across));
    [vertical_pair, horizontal_pair].into_iter().flatten().reduce(f64::max)
}

/// Finds the two edges perpendicular to the `across` axis (extent `across_len`)
/// and returns the angle between their fitted lines in degrees.
fn edge_pair(across_len: usize, along_len: usize, at: impl Fn(usize, usize) -> f64) -> Option<f64> {
    let band = along_len / BANDS;
    if band == 0 {
        return None;
    }
    let margin = ((across_len as f64 * EDGE_MARGIN) as usize).max(2);
    let mut near = Vec::new();
    let mut far = Vec::new();
    for b in 0..BANDS {
        let start = b * band;
        let centre = start as f64 + band as f64 / 2.0;
        let profile: Vec<f64> = (0..across_len)
            .map(|a| (start..start + band).map(|s| at(s, a)).sum::<f64>() / band as f64)
            .collect();
        let strongest = |range: std::ops::Range<usize>| {
            range
                .map(|a| (a, (profile[a + 1] - profile[a]).abs()))
                .fold((0usize, 0.0f64), |best, cur| if cur.1 > best.1 { cur } else { best })
        };
        let (a, g) = strongest(0..margin.min(across_len - 1));
        if g >= EDGE_CONTRAST {
            near.push((centre, a as f64 + 0.5));
        }
        let (a, g) = strongest(across_len.saturating_sub(margin + 1)..across_len - 1);
        if g >= EDGE_CONTRAST {
            far.push((centre, a as f64 + 0.5));
        }
    }
    let need = BANDS / 2 + 1;
    if near.len() < need || far.len() < need {
        return None;
    }
    Some((straight_edge_deg(&near)? - straight_edge_deg(&far)?).abs())
}

/// Angle of the least-squares line through `points`, or `None` when the
/// points do not form a straight edge.
fn straight_edge_deg(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let rss: f64 = points.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    ((rss / n).sqrt() <= MAX_EDGE_RESIDUAL).then(|| slope.atan().to_degrees())
}
