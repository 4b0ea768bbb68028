//! Fully connected networks: parameters, forward pass with activation
//! capture, and exact backpropagation.

mod mlp;
mod params;

pub use mlp::{
    accuracy, cross_entropy, forward, logits, loss_and_grad, mse, mse_loss_and_grad, predict,
    ActivationTrace, LossKind,
};
pub use params::{Activation, GradientSet, Layer, ModelParams, ParamSet};
