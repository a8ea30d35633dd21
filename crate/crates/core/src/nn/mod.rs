//! Parameter storage and optimizers shared by every trainable model.

pub mod optim;
mod params;

pub use optim::{cosine_lr, Adam, Sgd};
pub use params::{accumulate, clip_grad_norm, Binding, ParamId, ParamStore};
