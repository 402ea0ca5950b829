//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use attrib_core::backbone::Mlp;
use attrib_core::corpus::{tile_grid, Label, Split, SplitAssignment, SplitRatios, TileRect, TILE_SIZE};
use attrib_core::ensemble::{
    aggregate_image, sweep_threshold, Decision, EnsemblePrediction, Fixture, Fusion, REFERENCE_THRESHOLD,
};
use attrib_core::overlay::{render_confidence, render_uncertainty, OverlaySpec};
use attrib_core::pipeline::{self, AnalysisReport, EvaluationArtifact, RunArgs, Subcommand};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    if elapsed < limit {
        Ok(String::new())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Image means, positive-tile counts, tile totals where reported, and
/// decisions from the case studies.
const CASES: [(&str, f64, usize, Option<usize>, Decision); 5] = [
    ("aurora", 0.6719, 13, Some(20), Decision::ConsistentWithArtist),
    ("samson", 0.6547, 255, Some(380), Decision::ConsistentWithArtist),
    ("charles", 0.2883, 0, None, Decision::Inconsistent),
    ("head_young_man", 0.4310, 0, None, Decision::Inconsistent),
    ("buckingham", 0.3410, 2, None, Decision::Inconsistent),
];

fn fixture_regression() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for (name, prob, positive, total, decision) in CASES {
        let fx = Fixture::load(&fixture_dir().join(format!("{name}_tiles.json"))).map_err(|e| e.to_string())?;
        let preds = fx.predictions(REFERENCE_THRESHOLD).map_err(|e| e.to_string())?;
        let v = aggregate_image(&preds, REFERENCE_THRESHOLD).map_err(|e| e.to_string())?;
        ensure!((v.image_prob - prob).abs() <= 1e-4, "{name}: image_prob {} vs {prob}", v.image_prob);
        ensure!(v.tiles_positive == positive, "{name}: {} positive tiles vs {positive}", v.tiles_positive);
        if let Some(t) = total {
            ensure!(v.tiles_total == t, "{name}: {} tiles vs {t}", v.tiles_total);
        }
        ensure!(v.decision == decision, "{name}: decision {:?}", v.decision);
        parts.push(format!("{name} {:.4} {}/{}", v.image_prob, v.tiles_positive, v.tiles_total));
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(parts.join(", "))
}

fn reference_split() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = common::reference_manifest(dir.path());
    let mut cfg = pipeline::PipelineConfig::default();
    cfg.manifest = manifest;
    cfg.work_dir = dir.path().join("work");
    pipeline::run(Subcommand::Split, &cfg, &RunArgs::default()).map_err(|e| e.to_string())?;
    let split: SplitAssignment =
        serde_json::from_slice(&fs::read(cfg.work_dir.join("split.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let works: Vec<usize> = Split::ALL.iter().map(|s| split.counts(*s).works_total).collect();
    ensure!(works == [113, 14, 14], "work counts {works:?}");
    ensure!(split.assignments.len() == 141, "{} works assigned", split.assignments.len());
    let mut seen = BTreeSet::new();
    for s in Split::ALL {
        for id in split.works_in(s) {
            ensure!(seen.insert(id.to_string()), "{id} appears in two splits");
        }
    }
    // tile totals per class, straight from the manifest grid sizes
    let (neg, pos) = common::REFERENCE_TILES;
    let records = attrib_core::corpus::load_manifest(&cfg.manifest, None).map_err(|e| e.to_string())?;
    let largest = records
        .iter()
        .map(|r| tile_grid(r.width_px, r.height_px).map(|g| g.len()).unwrap_or(0))
        .max()
        .unwrap_or(0);
    let ratios = [cfg.split.ratios.train, cfg.split.ratios.val, cfg.split.ratios.test];
    let mut detail = Vec::new();
    for (s, r) in Split::ALL.into_iter().zip(ratios) {
        let c = split.counts(s);
        ensure!(c.works_negative > 0 && c.works_positive > 0, "{s} lacks a class");
        let bound = (r * (pos as f64 - neg as f64)).abs() + largest as f64;
        ensure!(
            c.tile_imbalance() as f64 <= bound,
            "{s}: tile imbalance {} exceeds bound {bound:.0}",
            c.tile_imbalance()
        );
        detail.push(format!("{s} {}/{}", c.works_negative, c.works_positive));
    }
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("113/14/14 works ({}), no leakage, balance within bound", detail.join(", ")))
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ratios = SplitRatios {
        train: 0.4,
        val: 0.3,
        test: 0.3,
    };
    let cfg = common::synthetic_pipeline(dir.path(), 40, 2024, 200, ratios);
    let args = RunArgs::default();
    for sub in [
        Subcommand::Ingest,
        Subcommand::Qc,
        Subcommand::Tile,
        Subcommand::Split,
        Subcommand::Train,
        Subcommand::Calibrate,
        Subcommand::Evaluate,
    ] {
        pipeline::run(sub, &cfg, &args).map_err(|e| format!("{}: {e}", sub.as_str()))?;
    }
    let elapsed = start.elapsed();
    let artifact: EvaluationArtifact =
        serde_json::from_slice(&fs::read(cfg.work_dir.join("reports/evaluation.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let e = artifact.evaluation;
    ensure!(e.image_accuracy >= 0.90, "image accuracy {:.4}", e.image_accuracy);
    ensure!(e.tile_accuracy >= 0.85, "tile accuracy {:.4}", e.tile_accuracy);
    within(elapsed, Duration::from_secs(600))?;
    Ok(format!(
        "image accuracy {:.4} ({}/{}), tile accuracy {:.4}, tau {:.4}, {:.0?}",
        e.image_accuracy,
        e.image_confusion.correct(),
        e.image_confusion.total(),
        e.tile_accuracy,
        e.threshold,
        elapsed
    ))
}

fn rect0() -> TileRect {
    TileRect {
        row: 0,
        col: 0,
        x: 0,
        y: 0,
        size: TILE_SIZE,
    }
}

/// Threshold search by brute force: score every candidate directly and keep
/// the best, closest to 0.5, then lowest.
fn sweep_oracle(scored: &[(f64, Label)]) -> (f64, f64) {
    let mut values: Vec<f64> = scored.iter().map(|s| s.0).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut cands = vec![0.0, 1.0];
    for i in 1..values.len() {
        cands.push((values[i - 1] + values[i]) / 2.0);
    }
    let ba = |t: f64| {
        let (mut tp, mut p, mut tn, mut n) = (0.0, 0.0, 0.0, 0.0);
        for &(s, l) in scored {
            if l == Label::Positive {
                p += 1.0;
                if s >= t {
                    tp += 1.0;
                }
            } else {
                n += 1.0;
                if s < t {
                    tn += 1.0;
                }
            }
        }
        0.5 * (tp / p + tn / n)
    };
    let best = cands.iter().map(|&t| ba(t)).fold(f64::MIN, f64::max);
    let mut tied: Vec<f64> = cands.into_iter().filter(|&t| (ba(t) - best).abs() < 1e-12).collect();
    tied.sort_by(|a, b| {
        let (da, db) = ((a - 0.5).abs(), (b - 0.5).abs());
        da.partial_cmp(&db).unwrap().then(a.partial_cmp(b).unwrap())
    });
    (tied[0], best)
}

fn numerical_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);

    // mean and variance against the pairwise-difference identity
    for _ in 0..10_000 {
        let probs: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..=1.0));
        let p = EnsemblePrediction::new("x", rect0(), probs, 0.5, Fusion::Mean).map_err(|e| e.to_string())?;
        let mean = (probs[0] + probs[1] + probs[2] + probs[3] + probs[4]) / 5.0;
        let mut pair = 0.0;
        for a in probs {
            for b in probs {
                pair += (a - b) * (a - b);
            }
        }
        let var = pair / 50.0;
        ensure!((p.mean - mean).abs() <= 1e-12, "mean {} vs {mean}", p.mean);
        ensure!((p.variance - var).abs() <= 1e-12, "variance {} vs {var}", p.variance);
        ensure!(p.variance <= 0.25, "variance {} above 0.25", p.variance);
    }

    // calibration against the exhaustive sweep
    for case in 0..100 {
        let n = rng.random_range(2..=12);
        let mut scored: Vec<(f64, Label)> = (0..n)
            .map(|_| {
                let s = (rng.random_range(0..=20) as f64) / 20.0;
                (s, Label::from_target(rng.random_bool(0.5)))
            })
            .collect();
        scored[0].1 = Label::Positive;
        scored[1].1 = Label::Negative;
        let cal = sweep_threshold(&scored).map_err(|e| e.to_string())?;
        let (t, ba) = sweep_oracle(&scored);
        ensure!((cal.threshold - t).abs() < 1e-12, "set {case}: threshold {} vs oracle {t}", cal.threshold);
        ensure!((cal.balanced_accuracy - ba).abs() < 1e-12, "set {case}: balanced accuracy");
        ensure!(
            cal.trace.iter().all(|c| c.balanced_accuracy <= cal.balanced_accuracy + 1e-12),
            "set {case}: a traced candidate beats the choice"
        );
    }

    // analytic gradient against central differences
    let net = Mlp::init(88, 32, &mut rng);
    let mut worst: f64 = 0.0;
    for trial in 0..4 {
        let x: Vec<f64> = (0..88).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target = (trial % 2) as f64;
        let mut grad = vec![0.0; net.params.len()];
        net.loss_and_grad(&x, target, &mut grad);
        let h = 1e-6;
        for k in (0..net.params.len()).step_by(7) {
            let mut plus = net.clone();
            plus.params[k] += h;
            let mut minus = net.clone();
            minus.params[k] -= h;
            let mut scratch = vec![0.0; grad.len()];
            let fd = (plus.loss_and_grad(&x, target, &mut scratch) - minus.loss_and_grad(&x, target, &mut scratch))
                / (2.0 * h);
            let scale = grad[k].abs().max(fd.abs());
            if scale > 1e-7 {
                worst = worst.max((grad[k] - fd).abs() / scale);
            }
        }
    }
    ensure!(worst <= 1e-4, "gradient relative error {worst:.2e}");
    Ok(format!(
        "10000 mean/variance vectors, 100 calibration sets, gradient rel. error {worst:.1e}"
    ))
}

/// Tile offsets along one axis must start at 0, leave no gaps and end flush.
fn axis_covered(offsets: &[u32], extent: u32) -> bool {
    let mut reach = 0;
    for &o in offsets {
        if o > reach || o + TILE_SIZE > extent {
            return false;
        }
        reach = o + TILE_SIZE;
    }
    reach == extent
}

fn geometry_suite() -> Outcome {
    let start = Instant::now();
    let mut checked = 0u64;
    for w in 512..=1600u32 {
        for h in 512..=1600u32 {
            let grid = tile_grid(w, h).map_err(|e| e.to_string())?;
            let (cols, rows) = (w.div_ceil(512), h.div_ceil(512));
            ensure!(grid.len() == (cols * rows) as usize, "{w}x{h}: {} tiles", grid.len());
            ensure!(
                grid.iter().all(|r| r.x + r.size <= w && r.y + r.size <= h),
                "{w}x{h}: rect out of bounds"
            );
            let xs: Vec<u32> = grid[..cols as usize].iter().map(|r| r.x).collect();
            let ys: Vec<u32> = grid.iter().step_by(cols as usize).map(|r| r.y).collect();
            ensure!(
                axis_covered(&xs, w) && axis_covered(&ys, h),
                "{w}x{h}: axis offsets leave a gap"
            );
            checked += 1;
        }
    }
    // exhaustive pixel coverage on a sample
    let mut rng = ChaCha8Rng::seed_from_u64(512);
    let mut sample: Vec<(u32, u32)> = vec![(512, 512), (1600, 1600), (513, 1599), (1024, 1025)];
    sample.extend((0..60).map(|_| (rng.random_range(512..=1600), rng.random_range(512..=1600))));
    for (w, h) in sample.iter().copied() {
        let mut hits = vec![0u8; (w * h) as usize];
        for r in tile_grid(w, h).map_err(|e| e.to_string())? {
            for y in r.y..r.y + r.size {
                for x in r.x..r.x + r.size {
                    hits[(y * w + x) as usize] = 1;
                }
            }
        }
        ensure!(hits.iter().all(|&v| v == 1), "{w}x{h}: uncovered pixel");
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{checked} sizes checked, {} with pixel coverage, {:.1?}",
        sample.len(),
        start.elapsed()
    ))
}

fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

/// Small-tile grid for overlay checks: `cols × rows` squares of `size` px.
fn small_grid(cols: u32, rows: u32, size: u32) -> Vec<TileRect> {
    (0..rows)
        .flat_map(|row| {
            (0..cols).map(move |col| TileRect {
                row,
                col,
                x: col * size,
                y: row * size,
                size,
            })
        })
        .collect()
}

fn overlay_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let spec = OverlaySpec::default();

    // zero variance leaves the painting untouched
    for (w, h) in [(512, 512), (1000, 700), (1600, 1100)] {
        let img = random_image(&mut rng, w, h);
        let grid = tile_grid(w, h).map_err(|e| e.to_string())?;
        let preds: Vec<_> = grid
            .iter()
            .map(|r| {
                let p = rng.random_range(0.0..1.0);
                EnsemblePrediction::new("x", *r, [p; 5], 0.5, Fusion::Mean).unwrap()
            })
            .collect();
        let out = render_uncertainty(&img, &grid, &preds, &spec).map_err(|e| e.to_string())?;
        ensure!(out == img, "{w}x{h}: zero-variance map differs from the source");
    }

    // 1000 random tiles: colour follows the threshold flag and every pixel
    // matches the blend formula
    let (size, cols, rows) = (8u32, 20u32, 10u32);
    let mut checked = 0;
    let mut worst = 0i32;
    for _ in 0..5 {
        let tau = rng.random_range(0.05..0.95);
        let img = random_image(&mut rng, cols * size, rows * size);
        let grid = small_grid(cols, rows, size);
        let preds: Vec<_> = grid
            .iter()
            .map(|r| {
                let probs: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..=1.0));
                EnsemblePrediction::new("x", *r, probs, tau, Fusion::Mean).unwrap()
            })
            .collect();
        let conf = render_confidence(&img, &grid, &preds, tau, &spec).map_err(|e| e.to_string())?;
        let unc = render_uncertainty(&img, &grid, &preds, &spec).map_err(|e| e.to_string())?;
        for (r, p) in grid.iter().zip(&preds) {
            let green = p.mean >= tau;
            ensure!(green == p.above_threshold, "flag disagrees with mean and tau");
            let side = if green { 1.0 - tau } else { tau };
            let a_conf = 0.6 * ((p.mean - tau).abs() / side).min(1.0);
            let tint_conf = if green { [0.0, 255.0, 0.0] } else { [255.0, 0.0, 0.0] };
            let a_unc = 0.6 * (p.variance / 0.25).min(1.0);
            for y in r.y..r.y + r.size {
                for x in r.x..r.x + r.size {
                    let base = img.get_pixel(x, y).0;
                    for c in 0..3 {
                        let want_c = (1.0 - a_conf) * base[c] as f64 + a_conf * tint_conf[c];
                        let want_u = (1.0 - a_unc) * base[c] as f64 + a_unc * [255.0, 0.0, 0.0][c];
                        worst = worst.max((conf.get_pixel(x, y).0[c] as f64 - want_c).round().abs() as i32);
                        worst = worst.max((unc.get_pixel(x, y).0[c] as f64 - want_u).round().abs() as i32);
                    }
                }
            }
            checked += 1;
        }
    }
    ensure!(checked >= 1000, "only {checked} predictions checked");
    ensure!(worst <= 1, "blend off by {worst} levels");
    Ok(format!("{checked} random tiles, max blend error {worst} level(s)"))
}

/// Every file under `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap());
    }
    out
}

struct RunArtifacts {
    models: BTreeMap<String, Vec<u8>>,
    split: Vec<u8>,
    report: serde_json::Value,
}

fn small_run(root: &Path) -> Result<RunArtifacts, String> {
    let ratios = SplitRatios {
        train: 0.5,
        val: 0.25,
        test: 0.25,
    };
    let cfg = common::synthetic_pipeline(root, 8, 99, 3, ratios);
    let args = RunArgs::default();
    for sub in [
        Subcommand::Ingest,
        Subcommand::Qc,
        Subcommand::Tile,
        Subcommand::Split,
        Subcommand::Train,
        Subcommand::Calibrate,
        Subcommand::Evaluate,
    ] {
        pipeline::run(sub, &cfg, &args).map_err(|e| format!("{}: {e}", sub.as_str()))?;
    }
    let analyze = RunArgs {
        artwork: Some("P-000".into()),
        ..RunArgs::default()
    };
    pipeline::run(Subcommand::Analyze, &cfg, &analyze).map_err(|e| e.to_string())?;
    let bytes = fs::read(cfg.work_dir.join("reports/P-000.report.json")).map_err(|e| e.to_string())?;
    let report: AnalysisReport = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    let mut value = serde_json::to_value(&report).map_err(|e| e.to_string())?;
    value.as_object_mut().unwrap().remove("timestamp");
    Ok(RunArtifacts {
        models: snapshot(&cfg.work_dir.join("ensemble")),
        split: fs::read(cfg.work_dir.join("split.json")).map_err(|e| e.to_string())?,
        report: value,
    })
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = small_run(a.path())?;
    let second = small_run(b.path())?;
    ensure!(first.models.len() == 6, "ensemble dir holds {} files", first.models.len());
    for (name, bytes) in &first.models {
        ensure!(second.models.get(name) == Some(bytes), "{name} differs between runs");
    }
    ensure!(first.split == second.split, "split files differ");
    ensure!(first.report == second.report, "reports differ beyond the timestamp");
    Ok(format!("{} model files, split file and report identical across two runs", first.models.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("fixture regression", fixture_regression),
        ("reference split shape", reference_split),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("numerical oracles", numerical_oracles),
        ("tiling geometry", geometry_suite),
        ("overlay contract", overlay_contract),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({secs:.2}s) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.2}s) {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
