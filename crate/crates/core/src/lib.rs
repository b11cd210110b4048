//! Arbitrary-modal semantic segmentation at desk scale.
//!
//! The crate bundles a small reverse-mode tensor engine, the self-query hub and
//! parallel pooling mixer blocks, the dual-branch encoder built from them,
//! sensor-to-frame converters with failure simulators, a procedural scene
//! generator, and a training/evaluation harness.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod model;
pub mod nn;
pub mod sensors;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autodiff::{grad_check, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
