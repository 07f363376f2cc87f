//! Versioned per-domain weight files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{LossConfig, OptimizerConfig, TrainConfig, TrainedReranker, TrainingScheme};
use super::WeightVector;
use crate::error::{Error, Result};

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
}

/// One domain's re-ranker as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub format_version: u32,
    pub domain: String,
    pub scheme: TrainingScheme,
    /// `(dc, ic, ner)` weights.
    pub w: [f64; 3],
    pub bias: Option<f64>,
    pub training: TrainingMetadata,
}

impl WeightFile {
    pub fn new(trained: &TrainedReranker, cfg: &TrainConfig) -> Self {
        Self {
            format_version: WEIGHT_FORMAT_VERSION,
            domain: trained.domain.clone(),
            scheme: trained.scheme,
            w: trained.weights.w,
            bias: trained.weights.bias,
            training: TrainingMetadata {
                seed: cfg.seed,
                iterations: trained.iterations,
                converged: trained.converged,
                final_objective: trained.final_objective,
                lambda1: trained.lambda1,
                lambda2: trained.lambda2,
                loss: cfg.loss,
                optimizer: cfg.optimizer,
            },
        }
    }

    pub fn weights(&self) -> WeightVector {
        WeightVector::new(self.w, self.bias)
    }

    /// The stored re-ranker; the objective history is not kept on disk.
    pub fn trained(&self) -> TrainedReranker {
        TrainedReranker {
            domain: self.domain.clone(),
            scheme: self.scheme,
            weights: self.weights(),
            iterations: self.training.iterations,
            converged: self.training.converged,
            final_objective: self.training.final_objective,
            lambda1: self.training.lambda1,
            lambda2: self.training.lambda2,
            objective_history: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        if file.format_version != WEIGHT_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: file.format_version,
                expected: WEIGHT_FORMAT_VERSION,
            });
        }
        if !file.weights().is_finite() {
            return Err(Error::Config(format!("non-finite weights for {}", file.domain)));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained() -> TrainedReranker {
        TrainedReranker {
            domain: "Music".into(),
            scheme: TrainingScheme::R3,
            weights: WeightVector::new([2.5, 0.75, 1.125], Some(-0.5)),
            iterations: 12,
            converged: true,
            final_objective: 0.25,
            lambda1: 0.01,
            lambda2: 0.001,
            objective_history: vec![1.0, 0.25],
        }
    }

    #[test]
    fn round_trip() {
        let file = WeightFile::new(&trained(), &TrainConfig::default());
        let back = WeightFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.weights(), trained().weights);
    }

    #[test]
    fn rejects_other_versions_and_bad_weights() {
        let mut file = WeightFile::new(&trained(), &TrainConfig::default());
        file.format_version = 2;
        assert!(matches!(WeightFile::from_json(&file.to_json().unwrap()), Err(Error::FormatVersion { found: 2, .. })));
        let text = WeightFile::new(&trained(), &TrainConfig::default())
            .to_json()
            .unwrap()
            .replace("2.5", "1e999");
        assert!(WeightFile::from_json(&text).is_err());
    }
}
