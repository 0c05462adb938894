//! Minimal deterministic neural-network engine in double precision.

mod adam;
pub mod gradcheck;
pub mod layers;
mod network;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use layers::{Activation, LayerKind, LayerSpec};
pub use network::{
    argmax, backward, cross_entropy, evaluate, evaluate_with_loss, forward, init_params, loss_and_grad, softmax, validate_params,
    ForwardCache,
};
pub use params::{ParamEntry, ParamSet};
pub use tensor::Tensor;
