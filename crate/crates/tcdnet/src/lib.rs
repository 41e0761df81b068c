//! Trajectory-image classifier with hand-written forward and backward passes,
//! training with early stopping, evaluation metrics and a checkpoint format.

pub mod checkpoint;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use metrics::{evaluate, MetricsReport};
pub use model::{decide, images_to_tensor, softmax, Model, ModelConfig, CLASSES};
pub use sweep::{sweep_configs, SweepCell, SweepPlan};
pub use tensor::{Scalar, Tensor};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum TcdError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input has {got} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("input {width}x{height} is smaller than the minimum side {min}")]
    InputTooSmall { height: usize, width: usize, min: usize },
    #[error("training diverged at epoch {epoch}: train loss {train_loss}, validation loss {val_loss}")]
    Diverged { epoch: usize, train_loss: f64, val_loss: f64 },
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Pipeline(#[from] darts_core::pipeline::PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
