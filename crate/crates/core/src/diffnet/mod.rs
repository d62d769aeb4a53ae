//! Reverse-mode differentiable tensors and the dual-encoder saliency network.

mod adam;
mod checkpoint;
mod network;
mod real;
mod tape;
mod tensor;
mod train;

pub use adam::{scheduled_lr, Adam};
pub use checkpoint::Checkpoint;
pub use network::{Bound, Forward, Modality, Network, NetworkConfig, ParamStore};
pub use real::Real;
pub use tape::{Grads, Tape, Var};
pub use tensor::{concat, concat_backward, conv2d, conv2d_backward, up2, up2_backward, Tensor};
pub use train::{train, train_from, EpochLog, Supervision, TrainConfig, TrainOutcome, TrainSample};
