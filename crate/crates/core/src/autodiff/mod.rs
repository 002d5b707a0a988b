//! Reverse-mode automatic differentiation, parameters and optimization.

pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{clip_grad_norm, Adam, AdamConfig, DEFAULT_CLIP_NORM, DEFAULT_LEARNING_RATE};
pub use params::{Bound, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
