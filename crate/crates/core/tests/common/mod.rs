#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use attrib_core::corpus::{SplitRatios, TILE_SIZE};
use attrib_core::pipeline::PipelineConfig;
use attrib_core::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Works per split and class in the reference corpus: (negative, positive).
pub const REFERENCE_WORKS: [(usize, usize); 3] = [(45, 68), (6, 8), (5, 9)];
/// Tiles per class over the whole reference corpus: (negative, positive).
pub const REFERENCE_TILES: (usize, usize) = (6015, 6370);

/// Splits `total` into `n` positive parts of varying size.
fn vary(total: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.4..1.6)).collect();
    let sum: f64 = weights.iter().sum();
    let mut parts: Vec<usize> = weights.iter().map(|w| ((w / sum) * total as f64).floor().max(1.0) as usize).collect();
    let mut i = 0;
    while parts.iter().sum::<usize>() < total {
        parts[i % n] += 1;
        i += 1;
    }
    parts
}

/// Canvas size whose tile grid has exactly `n` tiles.
fn dims_for(n: usize) -> (u32, u32) {
    let rows = (1..=n).filter(|r| n % r == 0 && r * r <= n).max().unwrap();
    let cols = n / rows;
    // edge-anchored grids do not need exact multiples of the tile size
    let trim = |k: usize| (k as u32 * TILE_SIZE).saturating_sub(if k > 1 { 137 } else { 0 });
    (trim(cols), trim(rows))
}

/// Writes a 141-work manifest (56 negative, 85 positive) whose image sizes
/// reproduce the reference tile totals. Image files are empty placeholders;
/// the manifest carries the dimensions.
pub fn reference_manifest(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(1410);
    fs::create_dir_all(dir.join("img")).unwrap();
    let path = dir.join("manifest.csv");
    let mut f = fs::File::create(&path).unwrap();
    writeln!(f, "artwork_id,title,label,certainty,image_path,px_per_mm,width_px,height_px").unwrap();
    let classes = [("N", "negative", 56, REFERENCE_TILES.0), ("P", "positive", 85, REFERENCE_TILES.1)];
    for (prefix, label, works, tiles) in classes {
        for (i, n) in vary(tiles, works, &mut rng).into_iter().enumerate() {
            let (w, h) = dims_for(n);
            let rel = format!("img/{prefix}{i:03}.tif");
            fs::write(dir.join(&rel), b"").unwrap();
            writeln!(f, "{prefix}{i:03},Work {prefix}{i:03},{label},1,{rel},6.0,{w},{h}").unwrap();
        }
    }
    path
}

/// Config for a procedurally generated two-texture corpus of `per_class`
/// single-tile paintings per class.
pub fn synthetic_pipeline(dir: &Path, per_class: usize, seed: u64, epochs: usize, ratios: SplitRatios) -> PipelineConfig {
    let manifest = synth::write_corpus(&dir.join("corpus"), per_class, &[(TILE_SIZE, TILE_SIZE)], seed).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.manifest = manifest;
    cfg.work_dir = dir.join("work");
    cfg.split.ratios = ratios;
    cfg.train.epochs = epochs;
    cfg
}

/// Writes `config` as JSON next to its work directory and returns the path.
pub fn write_config(dir: &Path, config: &PipelineConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    path
}
