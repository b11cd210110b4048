//! Network building blocks.

pub mod archive;
pub mod decoder;
pub mod fusion;
pub mod hub;
pub mod layers;
pub mod mhsa;
pub mod params;
pub mod ppx;

pub use decoder::{MlpDecoder, PatchEmbed};
pub use fusion::{FusionOutput, FusionPair};
pub use hub::{HubTrace, SelfQueryHub};
pub use mhsa::MhsaBlock;
pub use params::{grad_check_params, Bound, Init, ParamBuilder, ParamId, ParamSpec, ParamStore};
pub use ppx::{PpxBlock, PpxConfig, SqueezeExcite};
