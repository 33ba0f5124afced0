use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::SyntheticSpec;
use crate::classifier::{ClassifierConfig, ClassifierTrainConfig};
use crate::error::{Error, Result};
use crate::features::CnnConfig;
use crate::metrics::ScanMatchConfig;
use crate::predictor::{DecodeConfig, PredictorConfig, PredictorTrainConfig};
use crate::scanpath::GRID;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    /// Precomputed `[C, 8, 8]` maps under `features/`.
    Files,
    /// PGM images under `images/`, run through a frozen seeded CNN.
    Cnn,
}

/// Scanpath attached to each classifier sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanpathSource {
    /// Greedy decode of the trained predictor.
    Generated,
    /// One seeded-random recorded reader.
    Recorded,
    /// Uniform random fixations.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: usize,
    pub data_dir: PathBuf,
    pub features: FeatureSource,
    pub channels: usize,
    pub cnn: CnnConfig,
    pub predictor: PredictorConfig,
    pub predictor_train: PredictorTrainConfig,
    pub decode: DecodeConfig,
    pub classifier: ClassifierConfig,
    pub classifier_train: ClassifierTrainConfig,
    pub classifier_scanpaths: ScanpathSource,
    pub scanmatch: ScanMatchConfig,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: GRID,
            data_dir: PathBuf::from("data"),
            features: FeatureSource::Files,
            channels: 128,
            cnn: CnnConfig::default(),
            predictor: PredictorConfig::default(),
            predictor_train: PredictorTrainConfig::default(),
            decode: DecodeConfig::default(),
            classifier: ClassifierConfig::default(),
            classifier_train: ClassifierTrainConfig::default(),
            classifier_scanpaths: ScanpathSource::Generated,
            scanmatch: ScanMatchConfig::default(),
            synth: SyntheticSpec {
                channels: 128,
                ..Default::default()
            },
        }
    }
}

impl RunConfig {
    /// Small dimensions and short schedules that run on one CPU core.
    pub fn desk() -> Self {
        let channels = 8;
        Self {
            channels,
            cnn: CnnConfig {
                channels: vec![4, 8, 8, 8, channels],
            },
            predictor: PredictorConfig {
                feature_dim: channels,
                proj_dim: 32,
                embed_dim: 32,
                hidden: 64,
                out_init: 1e-2,
            },
            predictor_train: PredictorTrainConfig {
                lr: 3e-3,
                epochs: 100,
                batch_size: 16,
                ..Default::default()
            },
            classifier: ClassifierConfig {
                feature_dim: channels,
                ism_hidden: 32,
                ..Default::default()
            },
            classifier_train: ClassifierTrainConfig {
                lr: 1e-2,
                epochs: 50,
                lr_period: 20,
                ..Default::default()
            },
            synth: SyntheticSpec {
                channels,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid != GRID {
            return Err(Error::contract(format!("grid is fixed at {GRID}, got {}", self.grid)));
        }
        let c = self.channels;
        let checks = [
            ("predictor.feature_dim", self.predictor.feature_dim),
            ("classifier.feature_dim", self.classifier.feature_dim),
            ("synth.channels", self.synth.channels),
        ];
        for (name, v) in checks {
            if v != c {
                return Err(Error::DimMismatch {
                    name: name.into(),
                    expected: vec![c],
                    found: vec![v],
                });
            }
        }
        if self.features == FeatureSource::Cnn && self.cnn.out_channels() != c {
            return Err(Error::DimMismatch {
                name: "cnn.channels".into(),
                expected: vec![c],
                found: vec![self.cnn.out_channels()],
            });
        }
        let positive = [
            ("predictor_train.epochs", self.predictor_train.epochs),
            ("predictor_train.batch_size", self.predictor_train.batch_size),
            ("classifier_train.epochs", self.classifier_train.epochs),
            ("classifier_train.batch_size", self.classifier_train.batch_size),
            ("decode.max_len", self.decode.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("{name} must be at least 1")));
        }
        self.scanmatch.validate()
    }

    /// Canonical JSON, as hashed.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|source| Error::Json {
            what: "run config".into(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                what: format!("run config {}", path.display()),
                source,
            },
            e => e,
        })
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_documented_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.predictor_train.lr, 1e-5);
        assert_eq!(c.predictor_train.epochs, 200);
        assert_eq!(c.classifier_train.lr, 1e-4);
        assert_eq!(c.classifier_train.batch_size, 16);
        assert_eq!(c.classifier_train.epochs, 25);
        assert_eq!((c.classifier_train.lr_factor, c.classifier_train.lr_period), (0.2, 6));
        assert_eq!(c.decode.max_len, 64);
        c.validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_hash() {
        let c = RunConfig::desk();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let other = RunConfig { seed: 1, ..c.clone() };
        assert_ne!(other.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 7}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.channels, 128);
        assert!(RunConfig::from_json(r#"{"sede": 7}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grid": 8}"#).is_err());
        assert!(matches!(
            RunConfig::from_json(r#"{"channels": 8}"#),
            Err(Error::DimMismatch { .. })
        ));
    }
}
