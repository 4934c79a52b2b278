//! Minimal deterministic dense-network engine: tensors, MLPs with reverse-mode
//! gradients, Adam, and a differentiable spectral radius.

mod adam;
mod mlp;
mod spectral;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Activation, Dense, Mlp, MlpGrads, Trace};
pub use spectral::{eigenvalues, spectral_radius};
pub use tensor::Tensor;
