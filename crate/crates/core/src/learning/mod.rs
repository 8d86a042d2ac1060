//! Datasets, one-step prediction losses, training and checkpoints.

mod checkpoint;
pub mod dataset;
pub mod loss;
pub mod optim;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, BlackBoxRecord, Checkpoint, CholeskyRecord, InputRecord, ModelRecord, NetRecord,
    SavedModel, StructuredRecord, TrainingSummary, CHECKPOINT_VERSION,
};
pub use dataset::{Trajectory, TransitionDataset, TransitionSample};
pub use loss::{hnn_loss, lnn_loss, loss, loss_and_grad, sample_residual};
pub use optim::{clip_global_norm, AdamW, EpochStats, TrainConfig};
pub use train::train;
pub(crate) use optim::optimize;
