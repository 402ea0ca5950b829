use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, PipelineError};
use crate::backbone::TrainConfig;
use crate::corpus::{QcConfig, SplitRatios};
use crate::ensemble::Fusion;
use crate::overlay::OverlaySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::default(),
            seed: 7,
        }
    }
}

/// The single JSON document every subcommand reads. Relative paths resolve
/// against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    /// Root for relative image paths; defaults to the manifest's directory.
    pub image_root: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub qc: QcConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub fusion: Fusion,
    pub overlay: OverlaySpec,
    /// Fixed τ that replaces calibration.
    pub threshold: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.csv"),
            image_root: None,
            work_dir: PathBuf::from("work"),
            qc: QcConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            fusion: Fusion::default(),
            overlay: OverlaySpec::default(),
            threshold: None,
        }
    }
}

impl PipelineConfig {
    /// Reads, resolves and validates a config file. Any problem is a
    /// validation error.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut config: Self = read_json(path).map_err(|e| PipelineError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.work_dir);
        if let Some(root) = self.image_root.as_mut() {
            fix(root);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if let Err(e) = self.split.ratios.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.overlay.validate() {
            return bad(e.to_string());
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("threshold {t} is outside (0, 1)"));
            }
        }
        if !self.manifest.is_file() {
            return bad(format!("manifest {} does not exist", self.manifest.display()));
        }
        if let Some(root) = &self.image_root {
            if !root.is_dir() {
                return bad(format!("image_root {} is not a directory", root.display()));
            }
        }
        Ok(())
    }

    /// The defaults as pretty JSON, shown in `--help`.
    pub fn defaults_json() -> String {
        serde_json::to_string_pretty(&Self::default()).expect("defaults serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = PipelineConfig::defaults_json();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, PipelineConfig::default());
    }

    #[test]
    fn partial_document_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"split": {"seed": 3}}"#).unwrap();
        assert_eq!(c.split.seed, 3);
        assert_eq!(c.split.ratios, SplitRatios::default());
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"epochs": 3}"#).is_err());
    }
}
