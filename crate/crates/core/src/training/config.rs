use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::{ModelKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adaptive moments; decoupled weight decay when `weight_decay > 0`.
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            weight_decay: 0.0,
        }
    }
}

/// Experiment configuration for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    /// Labeled batch per step for M2 and SSVAE.
    pub labeled_batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelSpec::default(),
            epochs: 30,
            batch_size: 128,
            labeled_batch_size: 128,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            augmentation: AugmentationConfig::default(),
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augmentation.validate()?;
        self.loss_weights.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.labeled_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(self.optimizer.lr > 0.0) || self.optimizer.weight_decay < 0.0 {
            return Err(Error::Config("optimizer needs lr > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }

    /// Reject model/label combinations the training procedure cannot use.
    pub fn check_labels(&self, label_fraction: f64, n_train_categories: usize) -> Result<()> {
        let kind = self.model.model_kind;
        match kind {
            ModelKind::M2 | ModelKind::Ssvae if label_fraction <= 0.0 => {
                return Err(Error::Config(format!(
                    "{kind} needs labeled data, but the split has label_fraction 0"
                )));
            }
            ModelKind::Supervised if label_fraction < 1.0 => {
                return Err(Error::Config(format!(
                    "supervised training needs label_fraction 1.0, the split has {label_fraction}"
                )));
            }
            _ => {}
        }
        let labeled = matches!(kind, ModelKind::M2 | ModelKind::Ssvae | ModelKind::Supervised);
        if labeled && self.model.n_classes < n_train_categories {
            return Err(Error::Config(format!(
                "n_classes {} is smaller than the {} training categories",
                self.model.n_classes, n_train_categories
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_json() {
        let cfg = TrainConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.optimizer.lr, 1e-4);
        assert_eq!(cfg.model.tau, 0.996);
    }

    #[test]
    fn label_compatibility() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.check_labels(0.0, 128).is_ok());
        cfg.model.model_kind = ModelKind::Supervised;
        assert!(matches!(cfg.check_labels(0.0, 128), Err(Error::Config(_))));
        assert!(cfg.check_labels(1.0, 128).is_ok());
        cfg.model.model_kind = ModelKind::M2;
        assert!(cfg.check_labels(0.0, 128).is_err());
        assert!(cfg.check_labels(0.1, 128).is_ok());
        assert!(cfg.check_labels(0.1, 200).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochz": 3}"#).is_err());
    }
}
