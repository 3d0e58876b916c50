//! Two-stage model: a toy base encoder that produces embeddings, and the
//! flow-based adapter classifier trained on top of them.

pub mod adapter;
pub mod base;
pub mod checkpoint;
pub mod optim;
pub mod train;

pub use adapter::{
    adapter_backward, adapter_forward, adapter_loss_and_grad, predict, AdapterDims, AdapterModel,
    AdapterTrace,
};
pub use base::{base_forward, ToyBaseEncoder};
pub use checkpoint::{AdapterCheckpoint, BaseCheckpoint};
pub use optim::{adam_step, AdamConfig, AdamState, PlateauScheduler};
pub use train::{deterministic_ce, train_adapter, train_base, LogRow, TrainConfig, TrainHistory};
