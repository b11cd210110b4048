//! The four-stage dual-branch encoder-decoder and its parameter accounting.

mod cmnext;
pub mod config;

pub use cmnext::{count_params, forward_macs, INPUT_MEAN, INPUT_STD, Architecture, CmNext, ForwardTrace, ParamCount, SecondaryBranch, StageTrace};
pub use config::{quad_modalities, ModelConfig, DELIVER_CLASSES, STAGE_STRIDES};
