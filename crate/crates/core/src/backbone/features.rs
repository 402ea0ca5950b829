//! Handcrafted texture descriptor for one tile.
//!
//! Layout of the 88 values:
//!
//! | range    | content                                                   |
//! |----------|-----------------------------------------------------------|
//! | 0..48    | R, G, B intensity histograms, 16 bins each, each sums to 1 |
//! | 48..56   | share of gradient energy per orientation (8 bins, 0..180°) |
//! | 56..72   | band-pass energy, 4 pyramid scales × 4 orientations       |
//! | 72..80   | local variance (8×8 blocks), mean and spread per scale    |
//! | 80..88   | colour-class co-occurrence: 4 same-class, 4 cross-class   |

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::BackboneError;
use crate::corpus::TILE_SIZE;

pub const FEATURE_DIM: usize = 88;

pub const HIST_BINS: usize = 16;
pub const ORIENTATION_BINS: usize = 8;
pub const SCALES: usize = 4;

pub const HIST_RANGE: std::ops::Range<usize> = 0..48;
pub const ORIENTATION_RANGE: std::ops::Range<usize> = 48..56;
pub const BANDPASS_RANGE: std::ops::Range<usize> = 56..72;
pub const VARIANCE_RANGE: std::ops::Range<usize> = 72..80;
pub const COOCCURRENCE_RANGE: std::ops::Range<usize> = 80..88;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Wraps raw values; the length must be [`FEATURE_DIM`].
    pub fn from_values(values: Vec<f64>) -> Result<Self, BackboneError> {
        if values.len() != FEATURE_DIM {
            return Err(BackboneError::FeatureDim {
                expected: FEATURE_DIM,
                found: values.len(),
            });
        }
        Ok(Self(values))
    }
}

/// Single-channel f32 plane.
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    /// 2×2 mean pooling.
    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let r0 = &self.data[2 * y * self.w..];
            let r1 = &self.data[(2 * y + 1) * self.w..];
            for x in 0..w {
                data.push(0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]));
            }
        }
        Plane { w, h, data }
    }

    /// Residual after a 3×3 box blur, defined on the interior (edges are 0).
    fn highpass(&self) -> Plane {
        let (w, h) = (self.w, self.h);
        let mut data = vec![0.0f32; w * h];
        if w >= 3 && h >= 3 {
            // horizontal 3-sums, valid at 1..w-1 and stored at x-1
            let hw = w - 2;
            let mut hsum = vec![0.0f32; hw * h];
            for (dst, row) in hsum.chunks_exact_mut(hw).zip(self.data.chunks_exact(w)) {
                for (((d, &a), &b), &c) in dst.iter_mut().zip(row).zip(&row[1..]).zip(&row[2..]) {
                    *d = a + b + c;
                }
            }
            for y in 1..h - 1 {
                let (above, here, below) = (&hsum[(y - 1) * hw..y * hw], &hsum[y * hw..(y + 1) * hw], &hsum[(y + 1) * hw..(y + 2) * hw]);
                let src = &self.data[y * w + 1..(y + 1) * w - 1];
                let dst = &mut data[y * w + 1..(y + 1) * w - 1];
                for ((((d, &v), &a), &b), &c) in dst.iter_mut().zip(src).zip(above).zip(here).zip(below) {
                    *d = v - (a + b + c) / 9.0;
                }
            }
        }
        Plane { w, h, data }
    }
}

/// Sum using eight independent partial sums, which the compiler can keep in
/// one vector register.
fn lane_sum(v: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = v.chunks_exact(8);
    let rest: f32 = chunks.remainder().iter().sum();
    for c in chunks {
        for k in 0..8 {
            acc[k] += c[k];
        }
    }
    acc.iter().sum::<f32>() + rest
}

/// `out[i] = (a[i] - b[i])²`
fn squared_diff(a: &[f32], b: &[f32], out: &mut [f32]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = (x - y) * (x - y);
    }
}

// tan of the bin boundaries at 11.25°, 33.75°, 56.25°, 78.75°
const TAN_BOUNDS: [f32; 4] = [0.198_912_37, 0.668_178_6, 1.496_605_8, 5.027_339_5];

/// Orientation bin of the gradient (gx, gy), folded to [0°, 180°) with bin 0
/// centred on 0° (a horizontal gradient, i.e. a vertical edge).
#[inline]
pub(crate) fn orientation_bin(gx: f32, gy: f32) -> usize {
    let (gx, gy) = if gy < 0.0 { (-gx, -gy) } else { (gx, gy) };
    let ax = gx.abs();
    // bounds are increasing, so the octant is the number passed
    let octant = TAN_BOUNDS.iter().map(|&t| (gy >= t * ax) as usize).sum::<usize>();
    if gx < 0.0 {
        (ORIENTATION_BINS - octant) % ORIENTATION_BINS
    } else {
        octant
    }
}

/// Computes the 88-value descriptor of a 512×512 RGB tile.
pub fn extract_features(tile: &RgbImage) -> Result<FeatureVector, BackboneError> {
    if tile.width() != TILE_SIZE || tile.height() != TILE_SIZE {
        return Err(BackboneError::BadTileShape {
            width: tile.width(),
            height: tile.height(),
        });
    }
    let mut out = Vec::with_capacity(FEATURE_DIM);
    let n_px = (tile.width() * tile.height()) as f64;

    // one pass for histograms, luminance and colour classes
    let n = tile.as_raw().len() / 3;
    // four interleaved copies keep neighbouring increments independent
    let mut hist = [[[0u32; HIST_BINS]; 3]; 4];
    let mut lum = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for (i, p) in tile.as_raw().chunks_exact(3).enumerate() {
        let (r, g, b) = (p[0], p[1], p[2]);
        let copy = &mut hist[i & 3];
        copy[0][(r >> 4) as usize] += 1;
        copy[1][(g >> 4) as usize] += 1;
        copy[2][(b >> 4) as usize] += 1;
        let l = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
        lum.push(l as f32 * (1.0 / 255_000.0));
        classes.push(colour_class(l, r, b));
    }
    for c in 0..3 {
        out.extend((0..HIST_BINS).map(|k| hist.iter().map(|copy| copy[c][k]).sum::<u32>() as f64 / n_px));
    }

    let gray = Plane {
        w: tile.width() as usize,
        h: tile.height() as usize,
        data: lum,
    };
    out.extend(orientation_energies(&gray));

    let mut pyramid = vec![gray];
    for s in 1..SCALES {
        let next = pyramid[s - 1].downsample();
        pyramid.push(next);
    }
    for level in &pyramid {
        out.extend(bandpass_energies(&level.highpass()));
    }
    for level in &pyramid {
        out.extend(block_variance_stats(level, 8));
    }
    out.extend(cooccurrence(&classes, tile.width() as usize));

    debug_assert_eq!(out.len(), FEATURE_DIM);
    Ok(FeatureVector(out))
}

/// Share of squared central-difference gradient magnitude per orientation
/// bin. Shares keep the block independent of contrast; a flat tile gives
/// all zeros.
fn orientation_energies(gray: &Plane) -> [f64; ORIENTATION_BINS] {
    let mut energy = [0.0f64; ORIENTATION_BINS];
    let (w, h) = (gray.w, gray.h);
    let n = w - 2;
    let (mut gx, mut gy) = (vec![0.0f32; n], vec![0.0f32; n]);
    for y in 1..h - 1 {
        let up = &gray.data[(y - 1) * w + 1..y * w - 1];
        let mid = &gray.data[y * w..(y + 1) * w];
        let down = &gray.data[(y + 1) * w + 1..(y + 2) * w - 1];
        for ((g, &r), &l) in gx.iter_mut().zip(&mid[2..]).zip(&mid[..n]) {
            *g = 0.5 * (r - l);
        }
        for ((g, &d), &u) in gy.iter_mut().zip(down).zip(up) {
            *g = 0.5 * (d - u);
        }
        let mut row_acc = [0.0f32; ORIENTATION_BINS];
        for (&x, &y) in gx.iter().zip(&gy) {
            let bin = orientation_bin(x, y);
            let mag2 = x * x + y * y;
            // masked add over all bins instead of a scatter; adding zero
            // leaves the other bins unchanged
            for (k, acc) in row_acc.iter_mut().enumerate() {
                *acc += if k == bin { mag2 } else { 0.0 };
            }
        }
        for (e, r) in energy.iter_mut().zip(row_acc.iter()) {
            *e += *r as f64;
        }
    }
    let total: f64 = energy.iter().sum();
    if total > 0.0 {
        energy.map(|e| e / total)
    } else {
        energy
    }
}

/// Mean squared directional difference of a band-pass plane at 0°, 45°,
/// 90° and 135°.
fn bandpass_energies(band: &Plane) -> [f64; 4] {
    let (w, h) = (band.w, band.h);
    let mut acc = [0.0f64; 4];
    if w < 5 || h < 5 {
        return acc;
    }
    // skip the zero border left by the high-pass; x runs over 2..w-2
    let n = w - 4;
    let mut sq = vec![0.0f32; n];
    for y in 2..h - 2 {
        let up = &band.data[(y - 1) * w..y * w];
        let mid = &band.data[y * w..(y + 1) * w];
        let down = &band.data[(y + 1) * w..(y + 2) * w];
        let pairs = [
            (&mid[3..3 + n], &mid[1..1 + n]),
            (&up[3..3 + n], &down[1..1 + n]),
            (&down[2..2 + n], &up[2..2 + n]),
            (&down[3..3 + n], &up[1..1 + n]),
        ];
        for (a, (p, q)) in acc.iter_mut().zip(pairs) {
            squared_diff(p, q, &mut sq);
            *a += lane_sum(&sq) as f64;
        }
    }
    let count = ((w - 4) * (h - 4)) as f64;
    acc.map(|a| a / count)
}

/// Mean and standard deviation of the variances of non-overlapping
/// `block`×`block` windows.
fn block_variance_stats(plane: &Plane, block: usize) -> [f64; 2] {
    let (bw, bh) = (plane.w / block, plane.h / block);
    if bw == 0 || bh == 0 {
        return [0.0, 0.0];
    }
    let n = (block * block) as f64;
    let mut vars = Vec::with_capacity(bw * bh);
    let mut sums = vec![0.0f64; bw];
    for by in 0..bh {
        sums.fill(0.0);
        let rows = by * block..(by + 1) * block;
        for y in rows.clone() {
            let line = &plane.data[y * plane.w..y * plane.w + bw * block];
            for (bx, chunk) in line.chunks_exact(block).enumerate() {
                sums[bx] += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0f64; bw];
        for y in rows {
            let line = &plane.data[y * plane.w..y * plane.w + bw * block];
            for (bx, chunk) in line.chunks_exact(block).enumerate() {
                let m = means[bx];
                sq[bx] += chunk.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
            }
        }
        vars.extend(sq.iter().map(|s| s / n));
    }
    let m = vars.iter().sum::<f64>() / vars.len() as f64;
    let var = vars.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vars.len() as f64;
    [m, var.sqrt()]
}

/// Colour class of a pixel from its scaled luminance `lum` (0..=255000):
/// bit 0 set when light, bit 1 set when warm (red at least blue).
#[inline]
fn colour_class(lum: u32, r: u8, b: u8) -> u8 {
    let light = (lum >= 128_000) as u8;
    let warm = (r >= b) as u8;
    light | (warm << 1)
}

/// Co-occurrence of colour classes over right and down neighbour pairs,
/// summarised as the 4 same-class fractions followed by the 4 per-class
/// fractions of class-changing pairs. The eight values sum to 1.
fn cooccurrence(classes: &[u8], w: usize) -> [f64; 8] {
    // ordered pair codes a * 4 + b for right and down neighbours, counted
    // per code with a compare-and-count pass that vectorises
    let h = classes.len() / w;
    let mut codes = Vec::with_capacity(h * (w - 1) + (h - 1) * w);
    for (y, row) in classes.chunks_exact(w).enumerate() {
        codes.extend(row.windows(2).map(|p| p[0] * 4 + p[1]));
        if let Some(next) = classes.get((y + 1) * w..(y + 2) * w) {
            codes.extend(row.iter().zip(next).map(|(a, b)| a * 4 + b));
        }
    }
    let mut pairs = [0u64; 16];
    for (k, count) in pairs.iter_mut().enumerate() {
        *count = codes.iter().filter(|&&c| c as usize == k).count() as u64;
    }
    // symmetrise so that every pair counts once from each side
    let mut m = [[0u64; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            m[a][b] = pairs[a * 4 + b] + pairs[b * 4 + a];
        }
    }
    let total: u64 = m.iter().flatten().sum();
    let mut out = [0.0f64; 8];
    for k in 0..4 {
        out[k] = m[k][k] as f64 / total as f64;
        let cross: u64 = (0..4).filter(|&j| j != k).map(|j| m[k][j]).sum();
        out[4 + k] = cross as f64 / total as f64;
    }
    out
}
