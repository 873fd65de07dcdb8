//! Actor-critic network with hand-written gradients.

pub mod checkpoint;
pub mod gaussian;
pub mod init;
pub mod layers;
pub mod network;
pub mod real;
pub mod tensor;

pub use checkpoint::{Checkpoint, OptimizerState};
pub use gaussian::{entropy, log_prob, log_prob_grad, sample_action, sample_with};
pub use network::{
    backward, forward, forward_one, BatchOutput, ConvSpec, ForwardCache, NetInput, NetSpec, OutputGrads, PolicyParams,
    ACTION_DIM, LOG_STD_MAX, LOG_STD_MIN, PROPRIO_DIM,
};
pub use real::Real;
pub use tensor::Tensor;
