//! Minimal differentiable engine: dense and LSTM layers, losses, reverse-mode
//! gradients and a minibatch optimizer loop. Generic over [`Scalar`].
//!
//! [`Scalar`]: crate::Scalar

mod checkpoint;
mod graph;
mod layer;
mod loss;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{
    from_checkpoint_str, load_checkpoint, save_checkpoint, to_checkpoint_string,
    CHECKPOINT_VERSION,
};
pub use graph::{GradientSet, Graph, ParamId, Slot, Var};
pub(crate) use graph::softmax_in_place;
pub use layer::{Activation, BoundNet, Flow, Layer, LayerKind, LayerSpec, ModelParams};
pub use loss::{build_loss, mse, wmse, LossSpec};
pub use optim::OptimizerKind;
pub use tensor::Tensor;
pub use train::{fit, gradients, loss_value, stack, train, Gradients, ParamSet, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("dimension mismatch at layer {layer}: expected {expected}, got {actual}")]
    Dimension {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
