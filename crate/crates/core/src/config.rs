//! Experiment configuration: a typed TOML file with unknown keys
//! rejected, plus a canonical hash embedded in every checkpoint.

use serde::{Deserialize, Serialize};

use crate::data::{DataSource, DatasetManifest, SplitSpec, SyntheticSpec};
use crate::gate::GateConfig;
use crate::losses::{LossWeights, ReconReduction};
use crate::network::NetworkConfig;
use crate::optim::OptimConfig;
use crate::Result;

/// Loss configuration: weights plus the reconstruction target/reduction
/// switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_lambda_cls")]
    pub lambda_cls: f64,
    #[serde(default = "default_lambda_pseudo")]
    pub lambda_pseudo: f64,
    #[serde(default)]
    pub recon_reduction: ReconReduction,
    #[serde(default)]
    pub recon_target: ReconTarget,
}

fn default_lambda_cls() -> f64 {
    1.0
}
fn default_lambda_pseudo() -> f64 {
    0.75
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_pseudo: 0.75,
            recon_reduction: ReconReduction::default(),
            recon_target: ReconTarget::default(),
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_cls: self.lambda_cls,
            lambda_pseudo: self.lambda_pseudo,
        }
    }
}

/// Whether reconstruction targets are the normalized network inputs or
/// raw [0,1] pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconTarget {
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub mask_ratio: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    /// Checkpoint cadence in epochs.
    #[serde(default = "default_ckpt_every")]
    pub checkpoint_every: usize,
    /// Cap on validation samples scanned by the reliability monitor.
    #[serde(default = "default_val_cap")]
    pub val_cap: usize,
}

fn default_ckpt_every() -> usize {
    10
}
fn default_val_cap() -> usize {
    512
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_pretrain: 200,
            epochs_finetune: 100,
            mask_ratio: 0.75,
            batch_labeled: 16,
            batch_unlabeled: 32,
            checkpoint_every: default_ckpt_every(),
            val_cap: default_val_cap(),
        }
    }
}

/// Ablation switches mirroring the component study rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Drop the reconstruction loss entirely (classification + pseudo only).
    pub recon_off: bool,
    /// Weak-view-only pseudo filter; no strong-view checks.
    pub consistency_off: bool,
    /// Pseudo-labeling active from epoch 1, ignoring warm-up and monitor.
    pub gate_off_from_epoch1: bool,
    /// Warm-up only; after it the gate stays open with no accuracy check.
    pub gate_no_val_threshold: bool,
}

/// The full experiment configuration. Serializes to a canonical TOML text
/// whose SHA-256 is embedded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub gate: GateConfig,
    pub split: SplitSpec,
    #[serde(default)]
    pub optimizer: OptimConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ablation: AblationFlags,
    pub data: DatasetManifest,
}

impl RunConfig {
    /// Published full-scale defaults on a CIFAR-style manifest.
    pub fn reference_profile(data: DatasetManifest, seed: u64) -> Self {
        Self {
            seed,
            network: NetworkConfig::reference(data.num_classes),
            loss: LossConfig::default(),
            gate: GateConfig::default(),
            split: SplitSpec {
                labeled_fraction: 0.10,
                val_fraction_of_labeled: 0.10,
                seed,
            },
            optimizer: OptimConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationFlags::default(),
            data,
        }
    }

    /// Desk-scale profile on a synthetic 4-class dataset.
    pub fn toy_profile(seed: u64) -> Self {
        let spec = SyntheticSpec {
            num_classes: 4,
            train_samples: 2000,
            test_samples: 400,
            img_size: 16,
            channels: 3,
            seed: 77,
            noise_std: 0.5,
        };
        let data = DatasetManifest {
            name: "synthetic-4".into(),
            num_classes: spec.num_classes,
            height: spec.img_size,
            width: spec.img_size,
            channels: spec.channels,
            mean: None,
            std: None,
            source: DataSource::Synthetic(spec),
        };
        Self {
            seed,
            network: NetworkConfig::toy(data.num_classes),
            loss: LossConfig::default(),
            gate: GateConfig {
                t_warmup: 3,
                tau: 0.8,
                ..GateConfig::default()
            },
            split: SplitSpec {
                labeled_fraction: 0.10,
                val_fraction_of_labeled: 0.10,
                seed,
            },
            optimizer: OptimConfig {
                lr: 1e-3,
                ..OptimConfig::default()
            },
            train: TrainConfig {
                epochs_pretrain: 12,
                epochs_finetune: 4,
                checkpoint_every: 5,
                ..TrainConfig::default()
            },
            ablation: AblationFlags::default(),
            data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.num_classes != self.data.num_classes {
            return Err(crate::Error::Config(format!(
                "network expects {} classes, dataset has {}",
                self.network.num_classes, self.data.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.train.mask_ratio) {
            return Err(crate::Error::Config(format!(
                "mask_ratio {} outside [0, 1)",
                self.train.mask_ratio
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(crate::sha256_hex(self.to_toml()?.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let config = RunConfig::toy_profile(3);
        let text = config.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(config, back);
        assert_eq!(config.hash().unwrap(), back.hash().unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        let config = RunConfig::toy_profile(0);
        let mut text = config.to_toml().unwrap();
        text.push_str("\nunknown_key = 1\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::toy_profile(0);
        let mut b = a.clone();
        b.train.mask_ratio = 0.5;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn reference_profile_matches_published_hyperparameters() {
        let data = RunConfig::toy_profile(0).data;
        let mut manifest = data;
        manifest.num_classes = 10;
        let config = RunConfig::reference_profile(manifest, 0);
        assert_eq!(config.network.embed_dim, 768);
        assert_eq!(config.network.depth, 12);
        assert_eq!(config.network.num_heads, 12);
        assert_eq!(config.network.dec_embed_dim, 512);
        assert_eq!(config.network.dec_depth, 8);
        assert_eq!(config.network.dec_num_heads, 16);
        assert_eq!(config.network.patch_size, 16);
        assert_eq!(config.network.img_size, 224);
        assert_eq!(config.optimizer.lr, 1e-4);
        assert_eq!(config.optimizer.weight_decay, 0.05);
        assert_eq!(config.train.epochs_pretrain, 200);
        assert_eq!(config.train.epochs_finetune, 100);
        assert_eq!(config.train.mask_ratio, 0.75);
        assert_eq!(config.train.batch_labeled, 16);
        assert_eq!(config.train.batch_unlabeled, 32);
        assert_eq!(config.gate.t_warmup, 10);
        assert_eq!(config.gate.tau_acc, 0.70);
        assert_eq!(config.gate.tau, 0.95);
        assert_eq!(config.loss.lambda_cls, 1.0);
        assert_eq!(config.loss.lambda_pseudo, 0.75);
    }
}
