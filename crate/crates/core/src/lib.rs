//! Radiance fields with reflection-parameterized, roughness-aware view dependence.
//!
//! The crate is organized bottom-up:
//!
//! * [`sphmath`]: spherical harmonics, vMF attenuation functions, the integrated
//!   directional encoding and reflection geometry.
//! * [`autodiff`]: a small reverse-mode tape over dense 2-D tensors, dense layers,
//!   and the forward-mode tangent construction used for density gradients.
//! * [`field`]: the spatial/directional networks and color composition.
//! * [`renderer`]: rays, sampling, quadrature compositing and image rendering.
//! * [`losses`]: photometric loss and the two normal regularizers.
//! * [`trainer`]: Adam, learning-rate schedule, clipping and the training loop.
//! * [`scenes`]: the analytic glossy-sphere oracle, dataset I/O and PNG codecs.

pub mod autodiff;
pub mod error;
pub mod field;
pub mod losses;
pub mod renderer;
pub mod scenes;
pub mod sphmath;
pub mod trainer;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::{UnitVector3, Vec3};
