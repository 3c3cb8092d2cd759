//! Small CPU neural-network stack: layers with analytic backward passes,
//! MSE loss with L1/L2 penalties, Adam, and a recursive time-based
//! learning-rate decay.

mod checkpoint;
mod layers;
mod network;
mod optim;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{CheckpointHeader, Model, CHECKPOINT_VERSION};
pub use layers::{LayerSpec, Param};
pub use network::{
    backbone, mse_grad, mse_loss, p2anet_spec, vsnet1_spec, vsnet2_spec, NetKind, NetSpec, Network,
    DROPOUT_RATE,
};
pub use optim::{lr_schedule, lr_schedule_with_decay, Adam};
pub use tensor::Tensor;
pub use train::{evaluate, target_variance, timed, train, Samples, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
