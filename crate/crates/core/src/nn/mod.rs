//! Minimal differentiable-programming toolkit: tensors, a reverse-mode tape,
//! parameter storage, Adam, the layers the model is assembled from, and a
//! finite-difference gradient harness.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_params, GradCheck};
pub use layers::{FourierEncoder, GruCell, Mlp2, MultiHeadAttention};
pub use params::{ParamId, ParamRecord, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
