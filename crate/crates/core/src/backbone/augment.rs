//! Randomised tile augmentation.
//!
//! Geometric transforms (elastic field, perspective jitter, rotation, crop,
//! flip) are composed into one source-coordinate map and resampled once with
//! bilinear interpolation and reflect padding. Photometric transforms
//! (contrast, per-channel colour scale, Gaussian noise) follow.

use image::RgbImage;
use std::sync::OnceLock;

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::distribution::{ContinuousCDF, Normal as StatrsNormal};
use serde::{Deserialize, Serialize};

use super::BackboneError;
use crate::corpus::TileSample;

/// Closed interval `[lo, hi]` that a parameter is drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    fn is_fixed_at(&self, v: f64) -> bool {
        self.lo == v && self.hi == v
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Side of the random crop as a fraction of the tile, resized back to
    /// the full tile.
    pub crop_fraction: Range,
    pub rotation_deg: Range,
    pub flip_probability: f64,
    /// Standard deviation of additive noise, in [0, 1] channel units.
    pub noise_sigma: Range,
    pub contrast: Range,
    /// Independent multiplicative gain per channel.
    pub color_scale: Range,
    /// Maximum corner displacement as a fraction of the tile side.
    pub perspective_jitter: f64,
    /// RMS displacement of the elastic field in pixels; 0 disables it.
    pub elastic_displacement_px: f64,
    /// Gaussian smoothing of the elastic field in pixels.
    pub elastic_smoothing_px: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            crop_fraction: Range::new(0.8, 1.0),
            rotation_deg: Range::new(-15.0, 15.0),
            flip_probability: 0.5,
            noise_sigma: Range::new(0.0, 0.02),
            contrast: Range::new(0.8, 1.2),
            color_scale: Range::new(0.9, 1.1),
            perspective_jitter: 0.03,
            elastic_displacement_px: 8.0,
            elastic_smoothing_px: 34.0,
        }
    }
}

impl AugmentParams {
    /// Parameters under which `augment` returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            crop_fraction: Range::fixed(1.0),
            rotation_deg: Range::fixed(0.0),
            flip_probability: 0.0,
            noise_sigma: Range::fixed(0.0),
            contrast: Range::fixed(1.0),
            color_scale: Range::fixed(1.0),
            perspective_jitter: 0.0,
            elastic_displacement_px: 0.0,
            elastic_smoothing_px: 34.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.crop_fraction.is_fixed_at(1.0)
            && self.rotation_deg.is_fixed_at(0.0)
            && self.flip_probability == 0.0
            && self.noise_sigma.is_fixed_at(0.0)
            && self.contrast.is_fixed_at(1.0)
            && self.color_scale.is_fixed_at(1.0)
            && self.perspective_jitter == 0.0
            && self.elastic_displacement_px == 0.0
    }

    pub fn validate(&self) -> Result<(), BackboneError> {
        let bad = |what: &str| Err(BackboneError::InvalidConfig(format!("augmentation: {what}")));
        let ranges = [
            ("crop_fraction", self.crop_fraction),
            ("rotation_deg", self.rotation_deg),
            ("noise_sigma", self.noise_sigma),
            ("contrast", self.contrast),
            ("color_scale", self.color_scale),
        ];
        for (name, r) in ranges {
            if !r.valid() {
                return bad(&format!("{name} must be a finite range with lo <= hi"));
            }
        }
        if self.crop_fraction.lo <= 0.0 || self.crop_fraction.hi > 1.0 {
            return bad("crop_fraction must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability must lie in [0, 1]");
        }
        if self.noise_sigma.lo < 0.0 || self.contrast.lo < 0.0 || self.color_scale.lo < 0.0 {
            return bad("noise, contrast and colour scale must be non-negative");
        }
        if !(0.0..0.5).contains(&self.perspective_jitter) {
            return bad("perspective_jitter must lie in [0, 0.5)");
        }
        if !(self.elastic_displacement_px >= 0.0 && self.elastic_smoothing_px > 0.0) {
            return bad("elastic displacement must be >= 0 and smoothing > 0");
        }
        Ok(())
    }
}

/// Concrete transform drawn from [`AugmentParams`].
#[derive(Debug, Clone)]
struct Draw {
    crop: f64,
    crop_origin: (f64, f64),
    rotation_rad: f64,
    flip: bool,
    perspective: Option<Homography>,
    elastic: Option<ElasticField>,
    contrast: f64,
    color: [f64; 3],
    noise_sigma: f64,
}

/// Returns a randomly transformed copy of `tile`. Dimensions and label are
/// preserved. Parameters are assumed validated.
pub fn augment<R: Rng + ?Sized>(tile: &TileSample, params: &AugmentParams, rng: &mut R) -> TileSample {
    TileSample {
        artwork_id: tile.artwork_id.clone(),
        label: tile.label,
        rect: tile.rect,
        pixels: augment_image(&tile.pixels, params, rng),
    }
}

pub fn augment_image<R: Rng + ?Sized>(src: &RgbImage, params: &AugmentParams, rng: &mut R) -> RgbImage {
    let (w, h) = (src.width() as usize, src.height() as usize);
    let side = w.min(h) as f64;

    let crop = params.crop_fraction.sample(rng);
    let crop_origin = (
        rng.random_range(0.0..=1.0) * (1.0 - crop) * w as f64,
        rng.random_range(0.0..=1.0) * (1.0 - crop) * h as f64,
    );
    let rotation_rad = params.rotation_deg.sample(rng).to_radians();
    let flip = params.flip_probability > 0.0 && rng.random_bool(params.flip_probability);
    let perspective = (params.perspective_jitter > 0.0).then(|| {
        let j = params.perspective_jitter * side;
        let corners = [(0.0, 0.0), (w as f64, 0.0), (w as f64, h as f64), (0.0, h as f64)];
        let moved = corners.map(|(x, y)| (x + rng.random_range(-j..=j), y + rng.random_range(-j..=j)));
        Homography::from_quads(&corners, &moved)
    });
    let elastic = (params.elastic_displacement_px > 0.0)
        .then(|| ElasticField::random(w, h, params.elastic_displacement_px, params.elastic_smoothing_px, rng));
    let contrast = params.contrast.sample(rng);
    let color = [
        params.color_scale.sample(rng),
        params.color_scale.sample(rng),
        params.color_scale.sample(rng),
    ];
    let noise_sigma = params.noise_sigma.sample(rng);
    let draw = Draw {
        crop,
        crop_origin,
        rotation_rad,
        flip,
        perspective: perspective.flatten(),
        elastic,
        contrast,
        color,
        noise_sigma,
    };
    render(src, &draw, rng)
}

fn render<R: Rng + ?Sized>(src: &RgbImage, d: &Draw, rng: &mut R) -> RgbImage {
    let (w, h) = (src.width() as usize, src.height() as usize);
    let geometric = d.crop != 1.0 || d.rotation_rad != 0.0 || d.flip || d.perspective.is_some() || d.elastic.is_some();
    let photometric = d.contrast != 1.0 || d.color.iter().any(|&c| c != 1.0);
    let noisy = d.noise_sigma > 0.0;

    if !geometric && !photometric && !noisy {
        return src.clone();
    }

    let gain = d.color.map(|c| (d.contrast * c) as f32);
    let offset = d.color.map(|c| (127.5 * (1.0 - d.contrast) * c) as f32);
    // per-channel constants repeated along an interleaved row
    let gain_row: Vec<f32> = (0..w * 3).map(|i| gain[i % 3]).collect();
    let offset_row: Vec<f32> = (0..w * 3).map(|i| offset[i % 3]).collect();
    let sigma = (d.noise_sigma * 255.0) as f32;
    let mut noise = noisy.then(|| NoiseStream::new(rng.next_u64()));
    let geometry = geometric.then(|| (Padded::new(src), CoordMap::new(d, w, h)));

    let mut out = vec![0u8; w * h * 3];
    let mut line = vec![0.0f32; w * 3];
    let (mut xs, mut ys) = (vec![0.0f32; w], vec![0.0f32; w]);
    let mut taps = Taps::new(w);
    for (v, dst) in out.chunks_exact_mut(w * 3).enumerate() {
        if let Some((padded, map)) = &geometry {
            map.row(v, &mut xs, &mut ys);
            padded.sample_row(&xs, &ys, &mut taps, &mut line);
        } else {
            let src_row = &src.as_raw()[v * w * 3..(v + 1) * w * 3];
            for (l, &p) in line.iter_mut().zip(src_row) {
                *l = p as f32;
            }
        }
        if photometric {
            for ((l, g), o) in line.iter_mut().zip(&gain_row).zip(&offset_row) {
                *l = *l * g + o;
            }
        }
        if let Some(n) = noise.as_mut() {
            n.add_to(&mut line, sigma);
        }
        for (o, &l) in dst.iter_mut().zip(&line) {
            *o = to_u8_f32(l);
        }
    }
    RgbImage::from_raw(w as u32, h as u32, out).expect("buffer sized to image")
}

/// Source-pixel coordinates of every output pixel, evaluated exactly on a
/// lattice of [`ELASTIC_STRIDE`] and interpolated bilinearly in between.
/// The elastic field is itself bilinear on that lattice, so only the
/// perspective term is approximated, to well under a hundredth of a pixel
/// at the jitter magnitudes in use.
struct CoordMap {
    gw: usize,
    gh: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl CoordMap {
    fn new(d: &Draw, w: usize, h: usize) -> Self {
        let gw = w.div_ceil(ELASTIC_STRIDE) + 1;
        let gh = h.div_ceil(ELASTIC_STRIDE) + 1;
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (sin, cos) = d.rotation_rad.sin_cos();
        let mut xs = Vec::with_capacity(gw * gh);
        let mut ys = Vec::with_capacity(gw * gh);
        for j in 0..gh {
            for i in 0..gw {
                // pixel-centre coordinates in the output frame
                let (mut x, mut y) = ((i * ELASTIC_STRIDE) as f64 + 0.5, (j * ELASTIC_STRIDE) as f64 + 0.5);
                if let Some(field) = &d.elastic {
                    x += field.dx[j * field.gw + i];
                    y += field.dy[j * field.gw + i];
                }
                if let Some(hmg) = &d.perspective {
                    (x, y) = hmg.apply(x, y);
                }
                let (rx, ry) = (x - cx, y - cy);
                x = cx + cos * rx - sin * ry;
                y = cy + sin * rx + cos * ry;
                x = d.crop_origin.0 + x * d.crop;
                y = d.crop_origin.1 + y * d.crop;
                if d.flip {
                    x = w as f64 - x;
                }
                // back to index coordinates for sampling
                xs.push(x - 0.5);
                ys.push(y - 0.5);
            }
        }
        Self { gw, gh, x: xs, y: ys }
    }

    fn row(&self, v: usize, xs: &mut [f32], ys: &mut [f32]) {
        let j = (v / ELASTIC_STRIDE).min(self.gh - 2);
        let fy = (v - j * ELASTIC_STRIDE) as f64 / ELASTIC_STRIDE as f64;
        let lerp_row = |f: &[f64], i: usize| {
            let a = f[j * self.gw + i];
            a + (f[(j + 1) * self.gw + i] - a) * fy
        };
        for (grid, dst) in [(&self.x, &mut *xs), (&self.y, &mut *ys)] {
            const RAMP: [f32; ELASTIC_STRIDE] = {
                let mut r = [0.0; ELASTIC_STRIDE];
                let mut k = 0;
                while k < ELASTIC_STRIDE {
                    r[k] = k as f32;
                    k += 1;
                }
                r
            };
            for (seg, chunk) in dst.chunks_mut(ELASTIC_STRIDE).enumerate() {
                let i = seg.min(self.gw - 2);
                let left = lerp_row(grid, i);
                let step = (lerp_row(grid, i + 1) - left) / ELASTIC_STRIDE as f64;
                let base = (left + step * ((seg - i) * ELASTIC_STRIDE) as f64) as f32;
                let step = step as f32;
                for (out, &k) in chunk.iter_mut().zip(&RAMP) {
                    *out = base + step * k;
                }
            }
        }
    }
}

/// Standard-normal draws by inverse-CDF lookup: each 16-bit slice of a
/// xoshiro output selects one of 65536 equiprobable quantiles.
struct NoiseStream {
    rng: Xoshiro256PlusPlus,
    table: &'static [f32],
}

impl NoiseStream {
    fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            table: normal_quantiles(),
        }
    }

    /// Adds `sigma`-scaled draws to every element of `buf`.
    fn add_to(&mut self, buf: &mut [f32], sigma: f32) {
        let table: &[f32; 65536] = self.table.try_into().expect("table has 65536 entries");
        let mut chunks = buf.chunks_exact_mut(4);
        for chunk in &mut chunks {
            let bits = self.rng.next_u64();
            for (k, v) in chunk.iter_mut().enumerate() {
                *v += sigma * table[(bits >> (16 * k)) as u16 as usize];
            }
        }
        let bits = self.rng.next_u64();
        for (k, v) in chunks.into_remainder().iter_mut().enumerate() {
            *v += sigma * table[(bits >> (16 * k)) as u16 as usize];
        }
    }
}

fn normal_quantiles() -> &'static [f32] {
    static TABLE: OnceLock<Vec<f32>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = StatrsNormal::standard();
        (0..65536).map(|i| n.inverse_cdf((i as f64 + 0.5) / 65536.0) as f32).collect()
    })
}

/// Rounds half up and saturates to the 8-bit range.
#[inline]
fn to_u8_f32(v: f32) -> u8 {
    // f32::max returns the non-NaN operand, so the clamped value is finite
    trunc_in_range(v.max(0.0).min(255.0) + 0.5) as u8
}

/// Truncates a value known to lie in `[0, 2^31)`. Unlike `as`, this
/// compiles to a plain conversion that vectorises.
#[inline]
fn trunc_in_range(v: f32) -> u32 {
    // SAFETY: callers guarantee v is finite and representable as i32
    unsafe { v.to_int_unchecked::<i32>() as u32 }
}

/// Reflects `p` into `[0, n-1]` (mirror about the edge pixel centres).
#[inline]
fn reflect(p: f64, n: usize) -> f64 {
    let max = (n - 1) as f64;
    if (0.0..=max).contains(&p) {
        return p;
    }
    if max == 0.0 {
        return 0.0;
    }
    let period = 2.0 * max;
    let p = p.rem_euclid(period);
    if p > max {
        period - p
    } else {
        p
    }
}

#[inline]
fn reflect_f32(p: f32, n: usize) -> f32 {
    let max = (n - 1) as f32;
    if p >= 0.0 && p <= max {
        p
    } else if p < 0.0 && p >= -max {
        -p
    } else if p > max && p <= 2.0 * max {
        2.0 * max - p
    } else {
        // the f64 round trip can land a hair outside; NaN maps to 0
        (reflect(p as f64, n) as f32).max(0.0).min(max)
    }
}

/// Source image with one replicated column and row appended, so that the
/// right and lower bilinear neighbours always exist. Pixels are stored as
/// four bytes (the last unused) so two horizontal neighbours form one
/// 8-byte load.
struct Padded {
    w: usize,
    h: usize,
    stride: usize,
    data: Vec<u8>,
}

impl Padded {
    fn new(src: &RgbImage) -> Self {
        let (w, h) = (src.width() as usize, src.height() as usize);
        let stride = (w + 1) * 4;
        let mut data = Vec::with_capacity(stride * (h + 1));
        for row in src.as_raw().chunks_exact(w * 3) {
            for p in row.chunks_exact(3).chain(std::iter::once(&row[(w - 1) * 3..])) {
                data.extend_from_slice(&[p[0], p[1], p[2], 0]);
            }
        }
        data.extend_from_within((h - 1) * stride..h * stride);
        Self { w, h, stride, data }
    }

    /// Bilinear samples at `(xs[i], ys[i])` into interleaved `out`.
    fn sample_row(&self, xs: &[f32], ys: &[f32], taps: &mut Taps, out: &mut [f32]) {
        let (xmax, ymax) = ((self.w - 1) as f32, (self.h - 1) as f32);
        let within = |v: &[f32], max: f32| {
            let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            // NaN never passes these comparisons
            lo >= 0.0 && hi <= max
        };
        let stride = self.stride as u32;
        let lattice = |x: f32, y: f32| {
            let (x0, y0) = (trunc_in_range(x), trunc_in_range(y));
            (y0 * stride + x0 * 4, x - x0 as f32, y - y0 as f32)
        };
        let slots = taps.idx.iter_mut().zip(taps.fx.iter_mut()).zip(taps.fy.iter_mut());
        if within(xs, xmax) && within(ys, ymax) {
            for (((idx, fx), fy), (&x, &y)) in slots.zip(xs.iter().zip(ys)) {
                (*idx, *fx, *fy) = lattice(x, y);
            }
        } else {
            for (((idx, fx), fy), (&x, &y)) in slots.zip(xs.iter().zip(ys)) {
                (*idx, *fx, *fy) = lattice(reflect_f32(x, self.w), reflect_f32(y, self.h));
            }
        }
        for (((px, &i), &fx), &fy) in out.chunks_exact_mut(3).zip(&taps.idx).zip(&taps.fx).zip(&taps.fy) {
            let i = i as usize;
            let top: &[u8; 8] = self.data[i..i + 8].try_into().expect("8-byte window");
            let bottom: &[u8; 8] = self.data[i + self.stride..i + self.stride + 8].try_into().expect("8-byte window");
            // vertical pass over both neighbours at once, then horizontal
            let (t, b) = (top.map(f32::from), bottom.map(f32::from));
            let mut col = [0.0f32; 8];
            for k in 0..8 {
                col[k] = t[k] + (b[k] - t[k]) * fy;
            }
            for c in 0..3 {
                px[c] = col[c] + (col[c + 4] - col[c]) * fx;
            }
        }
    }
}

/// Per-row scratch for [`Padded::sample_row`]: top-left tap offset and
/// fractional position of every output pixel.
struct Taps {
    idx: Vec<u32>,
    fx: Vec<f32>,
    fy: Vec<f32>,
}

impl Taps {
    fn new(n: usize) -> Self {
        Self {
            idx: vec![0; n],
            fx: vec![0.0; n],
            fy: vec![0.0; n],
        }
    }
}

/// Projective map defined by four point correspondences.
#[derive(Debug, Clone)]
struct Homography([f64; 9]);

impl Homography {
    /// Solves for the map taking `from[i]` to `to[i]`. `None` for degenerate
    /// quads.
    fn from_quads(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Option<Self> {
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let (x, y) = from[i];
            let (u, v) = to[i];
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        // Gauss-Jordan with partial pivoting on the 8×8 system
        for col in 0..8 {
            let pivot = (col..8).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
            if a[pivot][col].abs() < 1e-12 {
                return None;
            }
            a.swap(col, pivot);
            let p = a[col][col];
            for k in col..9 {
                a[col][k] /= p;
            }
            for r in 0..8 {
                if r != col {
                    let f = a[r][col];
                    if f != 0.0 {
                        for k in col..9 {
                            a[r][k] -= f * a[col][k];
                        }
                    }
                }
            }
        }
        let mut m = [0.0; 9];
        for (i, row) in a.iter().enumerate() {
            m[i] = row[8];
        }
        m[8] = 1.0;
        Some(Self(m))
    }

    #[inline]
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let d = m[6] * x + m[7] * y + m[8];
        ((m[0] * x + m[1] * y + m[2]) / d, (m[3] * x + m[4] * y + m[5]) / d)
    }
}

/// Control lattice spacing for the elastic field, in pixels.
const ELASTIC_STRIDE: usize = 16;

/// Smooth random displacement field. White Gaussian noise on a coarse
/// lattice is smoothed with a Gaussian, rescaled to the requested RMS
/// displacement and bilinearly upsampled.
#[derive(Debug, Clone)]
struct ElasticField {
    gw: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl ElasticField {
    fn random<R: Rng + ?Sized>(w: usize, h: usize, rms_px: f64, smoothing_px: f64, rng: &mut R) -> Self {
        let gw = w.div_ceil(ELASTIC_STRIDE) + 1;
        let gh = h.div_ceil(ELASTIC_STRIDE) + 1;
        let sigma = smoothing_px / ELASTIC_STRIDE as f64;
        let mut fields = [0, 1].map(|_| {
            let noise: Vec<f64> = (0..gw * gh).map(|_| StandardNormal.sample(rng)).collect();
            gaussian_blur(&noise, gw, gh, sigma)
        });
        let rms = (fields.iter().flatten().map(|v| v * v).sum::<f64>() / (2 * gw * gh) as f64).sqrt();
        let gain = if rms > 0.0 { rms_px / rms } else { 0.0 };
        for f in fields.iter_mut() {
            f.iter_mut().for_each(|v| *v *= gain);
        }
        let [dx, dy] = fields;
        Self { gw, dx, dy }
    }
}

/// Separable Gaussian blur with reflect padding.
fn gaussian_blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let idx = |i: isize, n: usize| reflect(i as f64, n) as usize;

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * data[y * w + idx(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[idx(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}
