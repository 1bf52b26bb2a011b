//! A small CNN engine with hand-written backward passes, and the VIPRnet
//! binary classifier built on it.
//!
//! Tensors are row-major `f32` or `f64` arrays; batches are laid out
//! N x C x H x W. Training runs in 32-bit by default, 64-bit exists for
//! gradient checking and bit-exact reproducibility checks.

mod checkpoint;
mod gradcheck;
pub mod layers;
mod model;
mod optim;
mod scalar;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, NamedTensor, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, grad_check_on, grad_check_sweep, GradCheckReport};
pub use model::{init_weights, DropoutKeys, ForwardCache, NetConfig, Viprnet};
pub use optim::{Optimizer, OptimizerKind};
pub use scalar::{matmul, Scalar};
pub use tensor::Tensor;
pub use train::{
    evaluate, history_csv, predict, train, train_with_observer, Classifier, Dataset, EpochStats, Evaluation,
    LabeledImage, Precision, TrainConfig, TrainHistory,
};
