use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::AnalysisReport;
use super::{read_json, write_atomic, write_json, PipelineConfig, PipelineError, WorkLock};
use crate::corpus::{
    extract_tiles, load_manifest, load_rgb, quality_check, split_corpus, tile_grid, ArtworkRecord, Label,
    QualityReport, Split, SplitAssignment, TileRect, TileSample,
};
use crate::ensemble::{aggregate_image, Ensemble, EnsemblePrediction};
use crate::metrics::{agreement_stats, evaluate_predictions, AgreementStats, EvaluationReport};
use crate::overlay::{annotate_extremes, render_confidence, render_uncertainty};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Ingest,
    Qc,
    Tile,
    Split,
    Train,
    Calibrate,
    Evaluate,
    Analyze,
    Render,
}

impl Subcommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Ingest => "ingest",
            Subcommand::Qc => "qc",
            Subcommand::Tile => "tile",
            Subcommand::Split => "split",
            Subcommand::Train => "train",
            Subcommand::Calibrate => "calibrate",
            Subcommand::Evaluate => "evaluate",
            Subcommand::Analyze => "analyze",
            Subcommand::Render => "render",
        }
    }
}

/// Per-invocation overrides from the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArgs {
    pub artwork: Option<String>,
    /// Split seed for `split`, base training seed for `train`.
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    /// Output directory for reports and maps; defaults to `<work_dir>/reports`.
    pub out: Option<PathBuf>,
}

/// One artwork in the tile store index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileIndexEntry {
    pub label: Label,
    pub width: u32,
    pub height: u32,
    pub tiles: Vec<TileRect>,
}

/// Contents of `evaluation.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub evaluation: EvaluationReport,
    pub agreement: AgreementStats,
}

struct Work<'a> {
    root: &'a Path,
    out: PathBuf,
}

impl Work<'_> {
    fn records(&self) -> PathBuf {
        self.root.join("records.json")
    }
    fn qc(&self) -> PathBuf {
        self.root.join("qc.json")
    }
    fn tile_index(&self) -> PathBuf {
        self.root.join("tiles").join("index.json")
    }
    fn tile_path(&self, artwork_id: &str, rect: &TileRect) -> PathBuf {
        self.root.join("tiles").join(artwork_id).join(format!("{}.png", rect.stem()))
    }
    fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }
    fn ensemble(&self) -> PathBuf {
        self.root.join("ensemble")
    }
    fn report(&self, artwork_id: &str) -> PathBuf {
        self.out.join(format!("{artwork_id}.report.json"))
    }
}

/// Runs one subcommand and returns a human-readable summary.
pub fn run(sub: Subcommand, config: &PipelineConfig, args: &RunArgs) -> Result<String, PipelineError> {
    config.validate()?;
    if let Some(t) = args.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(PipelineError::Usage(format!("--threshold {t} is outside (0, 1)")));
        }
    }
    if matches!(sub, Subcommand::Analyze | Subcommand::Render) && args.artwork.is_none() {
        return Err(PipelineError::Usage(format!("`{}` needs --artwork", sub.as_str())));
    }
    let _lock = WorkLock::acquire(&config.work_dir)?;
    let work = Work {
        root: &config.work_dir,
        out: args.out.clone().unwrap_or_else(|| config.work_dir.join("reports")),
    };
    log::info!("running {}", sub.as_str());
    match sub {
        Subcommand::Ingest => ingest(config, &work),
        Subcommand::Qc => qc(config, &work),
        Subcommand::Tile => tile(config, &work),
        Subcommand::Split => split(config, &work, args),
        Subcommand::Train => train(config, &work, args),
        Subcommand::Calibrate => calibrate(config, &work, args),
        Subcommand::Evaluate => evaluate(config, &work, args),
        Subcommand::Analyze => analyze(config, &work, args),
        Subcommand::Render => render(config, &work, args),
    }
}

fn records(config: &PipelineConfig) -> Result<Vec<ArtworkRecord>, PipelineError> {
    Ok(load_manifest(&config.manifest, config.image_root.as_deref())?)
}

fn require<T: serde::de::DeserializeOwned>(
    path: PathBuf,
    what: &'static str,
    after: &'static str,
) -> Result<T, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::MissingArtifact { what, path, after });
    }
    read_json(&path)
}

/// Works that failed a previous `qc` run.
fn qc_failures(work: &Work) -> Result<BTreeSet<String>, PipelineError> {
    if !work.qc().is_file() {
        return Ok(BTreeSet::new());
    }
    let reports: Vec<QualityReport> = read_json(&work.qc())?;
    Ok(reports.into_iter().filter(|r| !r.passed).map(|r| r.artwork_id).collect())
}

fn ingest(config: &PipelineConfig, work: &Work) -> Result<String, PipelineError> {
    let recs = records(config)?;
    write_json(&work.records(), &recs)?;
    let pos = recs.iter().filter(|r| r.label == Label::Positive).count();
    let disputed = recs.iter().filter(|r| !r.is_trainable()).count();
    Ok(format!(
        "ingested {} works ({} positive, {} negative, {} disputed)",
        recs.len(),
        pos,
        recs.len() - pos,
        disputed
    ))
}

fn qc(config: &PipelineConfig, work: &Work) -> Result<String, PipelineError> {
    let recs = records(config)?;
    let reports: Vec<QualityReport> = recs
        .par_iter()
        .map(|r| {
            let img = r.load_image()?;
            quality_check(r, &img, &config.qc)
        })
        .collect::<Result<_, _>>()?;
    write_json(&work.qc(), &reports)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.artwork_id.as_str()).collect();
    for id in &failed {
        log::warn!("{id} failed quality control");
    }
    Ok(format!("{} passed, {} failed quality control", reports.len() - failed.len(), failed.len()))
}

fn tile(config: &PipelineConfig, work: &Work) -> Result<String, PipelineError> {
    let failed = qc_failures(work)?;
    let recs: Vec<ArtworkRecord> = records(config)?.into_iter().filter(|r| !failed.contains(&r.artwork_id)).collect();
    let entries: Vec<(String, TileIndexEntry)> = recs
        .par_iter()
        .map(|r| -> Result<_, PipelineError> {
            let img = r.load_image()?;
            let grid = tile_grid(img.width(), img.height())?;
            for t in extract_tiles(&img, &grid, &r.artwork_id, r.label)? {
                write_atomic(&work.tile_path(&r.artwork_id, &t.rect), &encode_png(&t.pixels)?)?;
            }
            Ok((
                r.artwork_id.clone(),
                TileIndexEntry {
                    label: r.label,
                    width: img.width(),
                    height: img.height(),
                    tiles: grid,
                },
            ))
        })
        .collect::<Result<_, _>>()?;
    let total: usize = entries.iter().map(|(_, e)| e.tiles.len()).sum();
    let index: BTreeMap<String, TileIndexEntry> = entries.into_iter().collect();
    write_json(&work.tile_index(), &index)?;
    Ok(format!("cut {total} tiles from {} works", index.len()))
}

fn split(config: &PipelineConfig, work: &Work, args: &RunArgs) -> Result<String, PipelineError> {
    let failed = qc_failures(work)?;
    let mut recs: Vec<ArtworkRecord> = records(config)?.into_iter().filter(|r| !failed.contains(&r.artwork_id)).collect();
    let counts: BTreeMap<String, usize> = if work.tile_index().is_file() {
        let index: BTreeMap<String, TileIndexEntry> = read_json(&work.tile_index())?;
        recs.retain(|r| index.contains_key(&r.artwork_id));
        index.into_iter().map(|(id, e)| (id, e.tiles.len())).collect()
    } else {
        recs.iter()
            .map(|r| Ok((r.artwork_id.clone(), tile_grid(r.width_px, r.height_px)?.len())))
            .collect::<Result<_, PipelineError>>()?
    };
    let seed = args.seed.unwrap_or(config.split.seed);
    let assignment = split_corpus(&recs, &counts, config.split.ratios, seed)?;
    write_json(&work.split(), &assignment)?;
    let mut s = String::from("split   works (neg/pos)   tiles (neg/pos)\n");
    for sp in Split::ALL {
        let c = assignment.counts(sp);
        let _ = writeln!(
            s,
            "{:<7} {:>5} ({:>3}/{:>3})   {:>6} ({}/{})",
            sp.as_str(),
            c.works_total,
            c.works_negative,
            c.works_positive,
            c.tiles_total,
            c.tiles_negative,
            c.tiles_positive
        );
    }
    if !assignment.excluded.is_empty() {
        let _ = writeln!(s, "excluded {} disputed works", assignment.excluded.len());
    }
    Ok(s)
}

fn encode_png(img: &RgbImage) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| PipelineError::Io {
            path: PathBuf::from("<png encoder>"),
            source: std::io::Error::other(e),
        })?;
    Ok(buf.into_inner())
}

/// Reads every stored tile of the works assigned to `which`.
fn split_tiles(work: &Work, which: Split) -> Result<Vec<TileSample>, PipelineError> {
    let assignment: SplitAssignment = require(work.split(), "split file", "split")?;
    let index: BTreeMap<String, TileIndexEntry> = require(work.tile_index(), "tile index", "tile")?;
    let mut jobs = Vec::new();
    for id in assignment.works_in(which) {
        let entry = index.get(id).ok_or_else(|| PipelineError::MissingArtifact {
            what: "tiles for a split work",
            path: work.root.join("tiles").join(id),
            after: "tile",
        })?;
        jobs.extend(entry.tiles.iter().map(|r| (id, entry.label, *r)));
    }
    jobs.par_iter()
        .map(|&(id, label, rect)| {
            Ok(TileSample {
                artwork_id: id.to_string(),
                label,
                rect,
                pixels: load_rgb(&work.tile_path(id, &rect))?,
            })
        })
        .collect()
}

fn load_ensemble(work: &Work) -> Result<Ensemble, PipelineError> {
    let dir = work.ensemble();
    if !dir.join(crate::ensemble::ENSEMBLE_FILE).is_file() {
        return Err(PipelineError::MissingArtifact {
            what: "trained ensemble",
            path: dir,
            after: "train",
        });
    }
    Ok(Ensemble::load(&dir)?)
}

fn threshold_override(config: &PipelineConfig, args: &RunArgs) -> Option<f64> {
    args.threshold.or(config.threshold)
}

fn train(config: &PipelineConfig, work: &Work, args: &RunArgs) -> Result<String, PipelineError> {
    let tiles = split_tiles(work, Split::Train)?;
    let seed = args.seed.unwrap_or(config.train.seed);
    log::info!("training 5 members on {} tiles, base seed {seed}", tiles.len());
    let mut ensemble = Ensemble::train(&tiles, &config.train, seed)?.with_fusion(config.fusion);
    if let Some(t) = threshold_override(config, args) {
        ensemble.set_threshold(t)?;
    }
    ensemble.save(&work.ensemble())?;
    let losses: Vec<String> = ensemble
        .members()
        .iter()
        .map(|m| format!("{:.4}", m.meta().and_then(|x| x.final_loss()).unwrap_or(f64::NAN)))
        .collect();
    Ok(format!(
        "trained 5 members on {} tiles (seeds {}..{}), final losses [{}]",
        tiles.len(),
        seed,
        seed + 4,
        losses.join(", ")
    ))
}

fn calibrate(config: &PipelineConfig, work: &Work, args: &RunArgs) -> Result<String, PipelineError> {
    let mut ensemble = load_ensemble(work)?;
    let msg = if let Some(t) = threshold_override(config, args) {
        ensemble.set_threshold(t)?;
        format!("threshold fixed at {t:.4}")
    } else {
        let val = split_tiles(work, Split::Val)?;
        let cal = ensemble.calibrate(&val)?;
        format!(
            "threshold {:.4} (balanced accuracy {:.4} on {} validation tiles)",
            cal.threshold,
            cal.balanced_accuracy,
            val.len()
        )
    };
    ensemble.save(&work.ensemble())?;
    Ok(msg)
}

fn evaluate(config: &PipelineConfig, work: &Work, args: &RunArgs) -> Result<String, PipelineError> {
    let mut ensemble = load_ensemble(work)?;
    if let Some(t) = threshold_override(config, args) {
        ensemble.set_threshold(t)?;
    }
    let test = split_tiles(work, Split::Test)?;
    let preds = ensemble.predict_tiles(&test)?;
    let agreement = agreement_stats(&preds)?;
    let labelled: Vec<_> = preds.into_iter().zip(test.iter().map(|t| t.label)).collect();
    let evaluation = evaluate_predictions(&labelled, ensemble.threshold())?;
    let text = evaluation.to_text();
    write_json(&work.out.join("evaluation.json"), &EvaluationArtifact { evaluation, agreement })?;
    write_atomic(&work.out.join("evaluation.txt"), text.as_bytes())?;
    Ok(text)
}

fn find_record(config: &PipelineConfig, artwork: &str) -> Result<ArtworkRecord, PipelineError> {
    records(config)?
        .into_iter()
        .find(|r| r.artwork_id == artwork)
        .ok_or_else(|| PipelineError::Usage(format!("artwork {artwork:?} is not in the manifest")))
}

fn analyze(config: &PipelineConfig, work: &Work, args: &RunArgs) -> Result<String, PipelineError> {
    let artwork = args.artwork.as_deref().expect("checked in run");
    let record = find_record(config, artwork)?;
    let mut ensemble = load_ensemble(work)?;
    if let Some(t) = threshold_override(config, args) {
        ensemble.set_threshold(t)?;
    }
    let img = record.load_image()?;
    let grid = tile_grid(img.width(), img.height())?;
    let tiles = extract_tiles(&img, &grid, &record.artwork_id, record.label)?;
    let preds = ensemble.predict_tiles(&tiles)?;
    let verdict = aggregate_image(&preds, ensemble.threshold())?;
    let timestamp = humantime::format_rfc3339_seconds(SystemTime::now()).to_string();
    let report = AnalysisReport::from_verdict(&verdict, ensemble.threshold(), ensemble.digest()?, timestamp);
    write_json(&work.report(artwork), &report)?;
    Ok(format!(
        "{}: {} (image probability {:.4}, {}/{} tiles at or above {:.4})",
        report.artwork_id, report.decision, report.image_prob, report.tiles_positive, report.tiles_total, report.threshold
    ))
}

fn render(config: &PipelineConfig, work: &Work, args: &RunArgs) -> Result<String, PipelineError> {
    let artwork = args.artwork.as_deref().expect("checked in run");
    let report: AnalysisReport = require(work.report(artwork), "analysis report", "analyze")?;
    let record = find_record(config, artwork)?;
    let img = record.load_image()?;
    let grid = report.grid();
    let preds: Vec<EnsemblePrediction> = report
        .tiles
        .iter()
        .map(|t| EnsemblePrediction::new(artwork, t.rect, t.member_probs, report.threshold, config.fusion))
        .collect::<Result<_, _>>()?;
    let spec = &config.overlay;
    let maps = [
        ("uncertainty", render_uncertainty(&img, &grid, &preds, spec)?),
        ("confidence", render_confidence(&img, &grid, &preds, report.threshold, spec)?),
    ];
    let mut written = Vec::new();
    for (name, map) in maps {
        let path = work.out.join(format!("{artwork}.{name}.png"));
        let annotated = annotate_extremes(&map, &grid, &preds, spec)?;
        write_atomic(&path, &encode_png(&annotated)?)?;
        written.push(path.display().to_string());
    }
    Ok(format!("wrote {}", written.join(", ")))
}
