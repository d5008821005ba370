//! Sequential generative models of 3D structure.
//!
//! Latent Gaussian variables drive an LSTM whose state writes additive
//! updates into a volumetric canvas through a volumetric spatial
//! transformer (or into a mesh parameter vector). A projection operator
//! maps the final canvas to the data domain: the identity for volumes, a
//! learned camera for images, or a black-box rasterizer for meshes.
//! Models are trained by maximizing a variational lower bound.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). Training
//! runs in `f32`; gradient checks and quadrature oracles use `f64`.

pub mod completion;
pub mod datasets;
pub mod error;
pub mod genmodel;
pub mod harness;
pub mod inference;
pub mod mesh_render;
pub mod nn;
pub mod projection;
pub mod scalar;
pub mod tensor;
pub mod vst;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type Tape64 = tensor::Tape<f64>;
