//! Versioned checkpoints: network parameters, optimizer state, gate
//! state, RNG derivation state, and the configuration hash. Loading
//! verifies both the format version and the hash unless explicitly
//! overridden.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::gate::GateState;
use crate::network::NetworkParams;
use crate::optim::AdamW;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// All stochastic streams are derived from (master_seed, epoch, purpose),
/// so the derivation state is just the pair below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub master_seed: u64,
    pub next_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub stage: Stage,
    /// Completed epochs in the current stage.
    pub epoch: usize,
    pub params: NetworkParams,
    pub optimizer: AdamW,
    pub gate: GateState,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Loads and verifies the format version. When `expect_config` is
    /// given, the stored config hash must match it unless
    /// `allow_config_mismatch` is set.
    pub fn load(
        path: &Path,
        expect_config: Option<&RunConfig>,
        allow_config_mismatch: bool,
    ) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        let stored_hash = ckpt.config.hash()?;
        if stored_hash != ckpt.config_hash {
            return Err(Error::Checkpoint(
                "stored config does not match its recorded hash".into(),
            ));
        }
        if let Some(expected) = expect_config {
            if expected.hash()? != ckpt.config_hash && !allow_config_mismatch {
                return Err(Error::Checkpoint(
                    "config hash mismatch; pass the override flag to load anyway".into(),
                ));
            }
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimConfig;

    fn toy_checkpoint() -> Checkpoint {
        let config = RunConfig::toy_profile(0);
        let params = NetworkParams::init(&config.network, 0).unwrap();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config.hash().unwrap(),
            config,
            stage: Stage::Pretrain,
            epoch: 2,
            params,
            optimizer: AdamW::new(OptimConfig::default()),
            gate: GateState::default(),
            rng: RngState {
                master_seed: 0,
                next_epoch: 2,
            },
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = toy_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path, Some(&ckpt.config), false).unwrap();
        assert_eq!(loaded.epoch, 2);
        assert_eq!(
            loaded.params.cls_token.value,
            ckpt.params.cls_token.value
        );
    }

    #[test]
    fn config_mismatch_rejected_without_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = toy_checkpoint();
        ckpt.save(&path).unwrap();
        let other = RunConfig::toy_profile(99);
        assert!(Checkpoint::load(&path, Some(&other), false).is_err());
        assert!(Checkpoint::load(&path, Some(&other), true).is_ok());
    }

    #[test]
    fn bad_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut ckpt = toy_checkpoint();
        ckpt.version = 99;
        ckpt.save(&path).unwrap();
        assert!(Checkpoint::load(&path, None, false).is_err());
    }
}
