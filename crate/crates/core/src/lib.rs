//! A CPU 3D deep-learning engine for transferring a brain-age regressor to
//! binary outcome classification: tensors and reverse-mode differentiation,
//! ResNet-3D models, Adam with per-stage schedules, volume and manifest
//! I/O with synthetic cohorts, the pretrain / refine / finetune pipeline, and
//! cross-validated evaluation.

pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Partition, TrainableSet, Variant};
pub use tensor::{DType, Element, Tensor};
pub use pipeline::{Checkpoint, CheckpointStage, Prediction};
