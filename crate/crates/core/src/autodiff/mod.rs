//! Reverse-mode differentiation over small dense matrices, plus the dense
//! networks built on it.

pub mod checkpoint;
pub mod encoding;
pub mod gradcheck;
pub mod network;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_layers, save_layers};
pub use encoding::{positional_encoding, positional_encoding_jacobian};
pub use network::{spatial_gradient, Activation, DenseLayer, DenseNetwork, LayerVars, NetworkVars};
pub use tape::{srgb_tonemap, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
