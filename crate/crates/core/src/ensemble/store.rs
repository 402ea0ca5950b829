use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Calibration, Ensemble, EnsembleError, Fusion};
use crate::backbone::TileClassifier;

pub const ENSEMBLE_FORMAT: &str = "attrib-ensemble";
pub const ENSEMBLE_FILE: &str = "ensemble.json";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub file: String,
    pub seed: u64,
    /// SHA-256 of the member file.
    pub digest: String,
}

/// Contents of `ensemble.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format: String,
    pub version: u32,
    pub threshold: f64,
    pub base_seed: u64,
    pub fusion: Fusion,
    pub calibration: Option<Calibration>,
    pub members: Vec<MemberEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EnsembleError + '_ {
    move |source| EnsembleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Ensemble {
    fn manifest_and_members(&self) -> Result<(EnsembleManifest, Vec<Vec<u8>>), EnsembleError> {
        let mut blobs = Vec::with_capacity(self.members.len());
        let mut entries = Vec::with_capacity(self.members.len());
        for (i, m) in self.members.iter().enumerate() {
            let bytes = m.to_json()?;
            entries.push(MemberEntry {
                file: format!("member_{i}.json"),
                seed: m.meta().map_or(self.base_seed + i as u64, |meta| meta.seed),
                digest: hex::encode(Sha256::digest(&bytes)),
            });
            blobs.push(bytes);
        }
        let manifest = EnsembleManifest {
            format: ENSEMBLE_FORMAT.into(),
            version: VERSION,
            threshold: self.threshold,
            base_seed: self.base_seed,
            fusion: self.fusion,
            calibration: self.calibration.clone(),
            members: entries,
        };
        Ok((manifest, blobs))
    }

    /// SHA-256 of the serialised `ensemble.json`, which pins every member
    /// through its digest.
    pub fn digest(&self) -> Result<String, EnsembleError> {
        let (manifest, _) = self.manifest_and_members()?;
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
        Ok(hex::encode(Sha256::digest(bytes)))
    }

    /// Writes five member files and `ensemble.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EnsembleError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let (manifest, blobs) = self.manifest_and_members()?;
        for (entry, bytes) in manifest.members.iter().zip(&blobs) {
            let path = dir.join(&entry.file);
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        let path = dir.join(ENSEMBLE_FILE);
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
        fs::write(&path, bytes).map_err(io_err(&path))
    }

    /// Loads an ensemble directory, verifying every member digest.
    pub fn load(dir: &Path) -> Result<Self, EnsembleError> {
        let path = dir.join(ENSEMBLE_FILE);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let format_err = |reason: String| EnsembleError::Format {
            path: path.clone(),
            reason,
        };
        let manifest: EnsembleManifest = serde_json::from_slice(&bytes).map_err(|e| format_err(e.to_string()))?;
        if manifest.format != ENSEMBLE_FORMAT || manifest.version != VERSION {
            return Err(format_err(format!("unsupported {} v{}", manifest.format, manifest.version)));
        }
        let mut members = Vec::with_capacity(manifest.members.len());
        for entry in &manifest.members {
            let mpath = dir.join(&entry.file);
            let mbytes = fs::read(&mpath).map_err(io_err(&mpath))?;
            let digest = hex::encode(Sha256::digest(&mbytes));
            if digest != entry.digest {
                return Err(format_err(format!("digest mismatch for {}", entry.file)));
            }
            members.push(TileClassifier::from_json(&mbytes)?);
        }
        Ensemble::from_stored(
            members,
            manifest.threshold,
            manifest.base_seed,
            manifest.fusion,
            manifest.calibration,
        )
    }
}
