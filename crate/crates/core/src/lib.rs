//! Personalized multimodal stress regression with self-supervised
//! forecasting pretraining.
//!
//! Per subject and per modality a 1D-CNN learns to forecast the next few
//! samples of its own signal. The convolutional stacks are then frozen, their
//! pooled outputs concatenated, and a small dense head is fitted on a handful
//! of quantized questionnaire labels. [`eval`] compares that route against an
//! identically shaped network trained from scratch on the same labels.

pub mod data;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod nn;
pub mod pipeline;
pub mod pretext;
pub mod seed;

pub use error::{Error, Result};
pub use nn::{ModelState, NetworkSpec, OptimizerConfig, Tensor2D};
