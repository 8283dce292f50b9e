//! # ssmae
//!
//! Semi-supervised masked autoencoder training for vision transformers.
//!
//! The model is trained on two objectives at once: masked patch
//! reconstruction on every image, and classification on labeled images.
//! Unlabeled images contribute pseudo-labels, but only when a
//! validation-driven dynamic gate certifies the classifier reliable:
//! predictions must clear a confidence threshold on both a weakly and a
//! strongly augmented view of the same image, agree between the views,
//! and the confidence-filtered validation accuracy must sit above a
//! configured floor.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`patch`]: image ↔ patch-token conversion and seeded random masking
//! - [`network`]: ViT encoder, lightweight decoder, classification head,
//!   with analytic gradients for every parameter
//! - [`losses`]: masked reconstruction MSE, cross-entropy, combined losses
//! - [`augment`]: weak/strong augmentation policies
//! - [`filter`]: confidence + consistency pseudo-label acceptance
//! - [`gate`]: the warm-up / reliability-monitor gate state machine
//! - [`data`]: dataset loading, stratified splits, paired batch streams
//! - [`trainer`]: pretraining, fine-tuning, evaluation, checkpointing
//! - [`cli`]: the `ssmae` command-line surface
//!
//! See the crate examples for runnable entry points into each capability.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod filter;
pub mod gate;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod patch;
pub mod plot;
pub mod trainer;

use thiserror::Error;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("toml encode error: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
