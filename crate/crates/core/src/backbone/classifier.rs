use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::augment::{augment_image, AugmentParams};
use super::features::{extract_features, FeatureVector, FEATURE_DIM};
use super::network::{Adam, AdamConfig, Mlp};
use super::BackboneError;
use crate::corpus::TileSample;
use crate::seed::mix_seed;

pub const MODEL_FORMAT: &str = "attrib-tile-classifier";
pub const MODEL_VERSION: u32 = 1;

/// Anything that maps a 512×512 RGB tile to a probability of the positive
/// class. External models plug in here.
pub trait TileModel: Send + Sync {
    fn probability(&self, tile: &RgbImage) -> Result<f64, BackboneError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_units: usize,
    pub optimizer: AdamConfig,
    pub augment: AugmentParams,
    /// Base seed; ensemble member `i` trains with `seed + i`.
    pub seed: u64,
    /// Reject training sets that contain a single class.
    pub require_both_classes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            hidden_units: 32,
            optimizer: AdamConfig::default(),
            augment: AugmentParams::default(),
            seed: 42,
            require_both_classes: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        let bad = |m: &str| Err(BackboneError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.hidden_units == 0 {
            return bad("hidden_units must be >= 1");
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return bad("Adam moment decays must lie in [0, 1)");
        }
        if !(o.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        self.augment.validate()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Per-dimension standardisation fitted on un-augmented training tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit(features: &[FeatureVector]) -> Self {
        let n = features.len() as f64;
        let mut mean = vec![0.0; FEATURE_DIM];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f.as_slice()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; FEATURE_DIM];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(f.as_slice()).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        // constant dimensions are centred but not rescaled
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, f: &FeatureVector) -> Vec<f64> {
        f.as_slice()
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Mean training BCE of every epoch.
    pub loss_history: Vec<f64>,
    pub config_digest: String,
}

impl TrainingMeta {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }
}

/// Reference tile classifier: handcrafted features, standardisation and a
/// small perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct TileClassifier {
    normalizer: Option<Normalizer>,
    net: Mlp,
    meta: Option<TrainingMeta>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    feature_dim: usize,
    hidden_units: usize,
    normalizer: Normalizer,
    params: Vec<f64>,
    meta: TrainingMeta,
}

impl TileClassifier {
    /// A freshly initialised network that refuses to predict.
    pub fn untrained(hidden_units: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, stream::INIT]));
        Self {
            normalizer: None,
            net: Mlp::init(FEATURE_DIM, hidden_units, &mut rng),
            meta: None,
        }
    }

    /// Assembles a trained classifier from its parts.
    pub fn from_parts(normalizer: Normalizer, net: Mlp, meta: TrainingMeta) -> Result<Self, BackboneError> {
        if net.inputs != FEATURE_DIM || normalizer.mean.len() != FEATURE_DIM || normalizer.scale.len() != FEATURE_DIM {
            return Err(BackboneError::FeatureDim {
                expected: FEATURE_DIM,
                found: net.inputs,
            });
        }
        if net.params.len() != Mlp::param_count(net.inputs, net.hidden) {
            return Err(BackboneError::ModelFormat("parameter count does not match layer sizes".into()));
        }
        Ok(Self {
            normalizer: Some(normalizer),
            net,
            meta: Some(meta),
        })
    }

    pub fn is_trained(&self) -> bool {
        self.normalizer.is_some()
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn meta(&self) -> Option<&TrainingMeta> {
        self.meta.as_ref()
    }

    pub fn predict_features(&self, features: &FeatureVector) -> Result<f64, BackboneError> {
        let norm = self.normalizer.as_ref().ok_or(BackboneError::UntrainedClassifier)?;
        Ok(self.net.probability(&norm.apply(features)))
    }

    /// Probability that the tile belongs to the positive class. No
    /// augmentation is applied.
    pub fn predict(&self, tile: &TileSample) -> Result<f64, BackboneError> {
        self.probability(&tile.pixels)
    }

    pub fn to_json(&self) -> Result<Vec<u8>, BackboneError> {
        let (normalizer, meta) = match (&self.normalizer, &self.meta) {
            (Some(n), Some(m)) => (n.clone(), m.clone()),
            _ => return Err(BackboneError::UntrainedClassifier),
        };
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            feature_dim: FEATURE_DIM,
            hidden_units: self.net.hidden,
            normalizer,
            params: self.net.params.clone(),
            meta,
        };
        serde_json::to_vec_pretty(&file).map_err(|e| BackboneError::ModelFormat(e.to_string()))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, BackboneError> {
        let file: ModelFile = serde_json::from_slice(bytes).map_err(|e| BackboneError::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(BackboneError::ModelFormat(format!(
                "unsupported model {} v{}",
                file.format, file.version
            )));
        }
        if file.feature_dim != FEATURE_DIM {
            return Err(BackboneError::FeatureDim {
                expected: FEATURE_DIM,
                found: file.feature_dim,
            });
        }
        let net = Mlp {
            inputs: file.feature_dim,
            hidden: file.hidden_units,
            params: file.params,
        };
        Self::from_parts(file.normalizer, net, file.meta)
    }

    pub fn save(&self, path: &Path) -> Result<(), BackboneError> {
        let bytes = self.to_json()?;
        fs::write(path, bytes).map_err(|source| BackboneError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BackboneError> {
        let bytes = fs::read(path).map_err(|source| BackboneError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&bytes)
    }

    /// SHA-256 of the serialised model.
    pub fn digest(&self) -> Result<String, BackboneError> {
        Ok(hex::encode(Sha256::digest(self.to_json()?)))
    }
}

impl TileModel for TileClassifier {
    fn probability(&self, tile: &RgbImage) -> Result<f64, BackboneError> {
        if self.normalizer.is_none() {
            return Err(BackboneError::UntrainedClassifier);
        }
        self.predict_features(&extract_features(tile)?)
    }
}

/// Independent random streams derived from one training seed.
mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
}

/// Trains a reference classifier with Adam on mean binary cross-entropy.
///
/// Each epoch reshuffles the data and augments every sample afresh; each
/// sample's augmentation stream is keyed by (seed, epoch, index), so results
/// do not depend on thread scheduling. Normalisation statistics come from
/// the un-augmented tiles.
pub fn train_classifier(tiles: &[TileSample], config: &TrainConfig, seed: u64) -> Result<TileClassifier, BackboneError> {
    config.validate()?;
    if tiles.is_empty() {
        return Err(BackboneError::EmptyTrainingSet);
    }
    if config.require_both_classes {
        let first = tiles[0].label;
        if tiles.iter().all(|t| t.label == first) {
            return Err(BackboneError::SingleClassData(first));
        }
    }

    let base: Vec<FeatureVector> = tiles
        .par_iter()
        .map(|t| extract_features(&t.pixels))
        .collect::<Result<_, _>>()?;
    let normalizer = Normalizer::fit(&base);
    let cached: Option<Vec<Vec<f64>>> = config
        .augment
        .is_identity()
        .then(|| base.iter().map(|f| normalizer.apply(f)).collect());
    drop(base);
    let targets: Vec<f64> = tiles.iter().map(|t| t.label.target()).collect();

    let mut classifier = TileClassifier::untrained(config.hidden_units, seed);
    let mut adam = Adam::new(config.optimizer, classifier.net.params.len());
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, stream::SHUFFLE, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<Vec<f64>> = match &cached {
                Some(c) => batch.iter().map(|&i| c[i].clone()).collect(),
                None => batch
                    .par_iter()
                    .map(|&i| {
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(mix_seed(&[seed, stream::AUGMENT, epoch as u64, i as u64]));
                        let pixels = augment_image(&tiles[i].pixels, &config.augment, &mut rng);
                        extract_features(&pixels).map(|f| normalizer.apply(&f))
                    })
                    .collect::<Result<_, _>>()?,
            };
            let ts: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let (loss, grad) = classifier.net.batch_loss_and_grad(&xs, &ts);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(BackboneError::NonFiniteLoss {
                    epoch,
                    last_loss: loss_history.last().copied(),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut classifier.net.params, &grad);
        }
        loss_history.push(epoch_loss / tiles.len() as f64);
    }

    classifier.normalizer = Some(normalizer);
    classifier.meta = Some(TrainingMeta {
        seed,
        epochs: config.epochs,
        batch_size: config.batch_size,
        loss_history,
        config_digest: config.digest(),
    });
    Ok(classifier)
}

/// Training-set accuracy at the 0.5 cut.
#[cfg(test)]
pub(crate) fn accuracy_at_half(classifier: &TileClassifier, tiles: &[TileSample]) -> Result<f64, BackboneError> {
    let correct = tiles
        .par_iter()
        .map(|t| classifier.predict(t).map(|p| (p >= 0.5) == (t.label == crate::corpus::Label::Positive)))
        .collect::<Result<Vec<bool>, _>>()?
        .into_iter()
        .filter(|&b| b)
        .count();
    Ok(correct as f64 / tiles.len() as f64)
}
