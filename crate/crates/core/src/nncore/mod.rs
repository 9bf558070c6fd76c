//! Dense `f64` numerics with hand-derived gradients.

pub mod gradcheck;
pub mod mlp;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use mlp::{mlp_forward, Linear, MlpParams, MlpTape};
pub use ops::{argmax, cross_entropy, softmax, Activation};
pub use optim::{clip_grad_norm, OptimizerKind, OptimizerState, DEFAULT_LR};
pub use params::Parameters;
pub use tensor::Tensor;
