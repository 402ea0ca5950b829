//! Procedural two-texture corpus.
//!
//! Positive works are covered with oriented stroke texture (wave components
//! whose direction of variation stays near horizontal, i.e. near-vertical
//! strokes); negative works use the same spectrum with directions spread
//! evenly over the half circle. Colour and amplitude statistics are shared, so only texture
//! orientation separates the classes.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{tile_grid, Label, TileSample, TILE_SIZE};
use crate::seed::mix_seed;

const COMPONENTS: usize = 12;

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

fn waves<R: Rng + ?Sized>(oriented: bool, rng: &mut R) -> Vec<Wave> {
    let centre = rng.random_range(-20.0f64..20.0).to_radians();
    let jitter = Normal::new(0.0, 8.0f64.to_radians()).unwrap();
    let offset = rng.random_range(0.0..PI);
    (0..COMPONENTS)
        .map(|i| {
            // isotropic directions are stratified over the half circle so a
            // painting never clusters them by chance
            let dir = if oriented {
                centre + jitter.sample(rng)
            } else {
                offset + (i as f64 + rng.random::<f64>()) * PI / COMPONENTS as f64
            };
            let period = rng.random_range(8.0..40.0);
            let k = 2.0 * PI / period;
            Wave {
                kx: k * dir.cos(),
                ky: k * dir.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amp: rng.random_range(0.5..1.0),
            }
        })
        .collect()
}

/// Paints a `width × height` canvas with the texture of the given class.
pub fn painting<R: Rng + ?Sized>(width: u32, height: u32, label: Label, rng: &mut R) -> RgbImage {
    let comps = waves(label == Label::Positive, rng);
    let norm = (comps.iter().map(|w| w.amp * w.amp).sum::<f64>() / 2.0).sqrt();
    let base = [
        rng.random_range(110.0..170.0),
        rng.random_range(90.0..150.0),
        rng.random_range(60.0..120.0),
    ];
    let tint = [
        rng.random_range(0.8..1.2),
        rng.random_range(0.8..1.2),
        rng.random_range(0.8..1.2),
    ];
    let contrast = rng.random_range(30.0..45.0);
    let grain = Normal::new(0.0, 3.0).unwrap();
    let mut img = RgbImage::new(width, height);
    let mut values = vec![0.0f64; width as usize];
    for (y, row) in img.rows_mut().enumerate() {
        // accumulate each wave along the row by complex rotation instead of
        // one cosine per pixel
        values.fill(0.0);
        for w in &comps {
            let (mut s, mut c) = (w.ky * y as f64 + w.phase).sin_cos();
            let (ds, dc) = w.kx.sin_cos();
            for v in values.iter_mut() {
                *v += w.amp * c;
                (c, s) = (c * dc - s * ds, s * dc + c * ds);
            }
        }
        for (px, v) in row.zip(&values) {
            let v = v / norm;
            let g: f64 = grain.sample(rng);
            *px = Rgb(std::array::from_fn(|c| (base[c] + contrast * tint[c] * v + g).round().clamp(0.0, 255.0) as u8));
        }
    }
    img
}

pub fn oriented_tile<R: Rng + ?Sized>(rng: &mut R) -> RgbImage {
    painting(TILE_SIZE, TILE_SIZE, Label::Positive, rng)
}

pub fn isotropic_tile<R: Rng + ?Sized>(rng: &mut R) -> RgbImage {
    painting(TILE_SIZE, TILE_SIZE, Label::Negative, rng)
}

/// `n_pos` oriented and `n_neg` isotropic single-tile samples.
pub fn texture_tiles(n_pos: usize, n_neg: usize, seed: u64) -> Vec<TileSample> {
    let labels = std::iter::repeat_n(Label::Positive, n_pos).chain(std::iter::repeat_n(Label::Negative, n_neg));
    labels
        .enumerate()
        .map(|(i, label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, i as u64]));
            TileSample {
                artwork_id: format!("synth-{i:04}"),
                label,
                rect: tile_grid(TILE_SIZE, TILE_SIZE).unwrap()[0],
                pixels: painting(TILE_SIZE, TILE_SIZE, label, &mut rng),
            }
        })
        .collect()
}

/// One synthetic work written by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct SynthWork {
    pub artwork_id: String,
    pub label: Label,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

/// Writes `per_class` PNG paintings of each class under `dir` plus a
/// `manifest.csv`, and returns the manifest path. Canvas sizes are drawn
/// from `sizes`.
pub fn write_corpus(dir: &Path, per_class: usize, sizes: &[(u32, u32)], seed: u64) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir.join("images"))?;
    let mut works = Vec::new();
    for label in [Label::Positive, Label::Negative] {
        for i in 0..per_class {
            let prefix = if label == Label::Positive { "P" } else { "N" };
            let id = format!("{prefix}-{i:03}");
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, label.target() as u64, i as u64]));
            let (w, h) = sizes[rng.random_range(0..sizes.len())];
            let img = painting(w, h, label, &mut rng);
            let rel = PathBuf::from("images").join(format!("{id}.png"));
            img.save(dir.join(&rel)).map_err(std::io::Error::other)?;
            works.push(SynthWork {
                artwork_id: id,
                label,
                path: rel,
                width: w,
                height: h,
            });
        }
    }
    let manifest = dir.join("manifest.csv");
    let mut f = fs::File::create(&manifest)?;
    writeln!(f, "artwork_id,title,label,certainty,image_path,px_per_mm")?;
    for w in &works {
        writeln!(
            f,
            "{},Synthetic {} {},{},1,{},5.0",
            w.artwork_id,
            w.label,
            w.artwork_id,
            w.label,
            w.path.display()
        )?;
    }
    Ok(manifest)
}
