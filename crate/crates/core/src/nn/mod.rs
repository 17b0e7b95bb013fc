//! A small, fixed-architecture numerical stack: the convolutional Q-network,
//! its hand-written backward pass, Huber loss and RMSProp.

mod checkpoint;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;

use thiserror::Error;

pub use checkpoint::{parameter_shapes, Checkpoint, RngState};
pub use layers::{relu_backward_in_place, relu_in_place, Activation, BatchNorm, BatchNormCache, Conv2d, Linear};
pub use loss::{huber_grad, huber_loss, mean_huber};
pub use network::{ForwardCache, Gradients, Mode, NetConfig, NetDepth, QNetwork};
pub use optim::RmsProp;
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: String, got: String },
    #[error("training mode needs at least 2 samples for batch statistics, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
