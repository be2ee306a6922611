//! Reverse-mode autodiff and the proximal networks built on it.

pub mod adam;
pub mod checkpoint;
pub mod embed;
mod kernels;
pub mod layers;
pub mod network;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use embed::{film_modulate, film_residual_modulate, sinusoidal_encode, EmbedConfig, TimeEmbedder};
pub use layers::{ParamId, ParamStore};
pub use network::{Architecture, NetworkConfig, ProxNetwork};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
