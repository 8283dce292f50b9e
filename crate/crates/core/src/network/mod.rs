//! The SSMAE network: a ViT encoder shared between masked reconstruction
//! and classification, a lightweight transformer decoder, and a linear
//! classification head. All gradients are computed analytically.

mod layers;
mod model;

pub use layers::{DropCtx, Param, ParamSet};
pub use model::{ClsCache, NetworkConfig, NetworkParams, ReconCache};
