//! EEG-to-facial-geometry decoding.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`signal`]: band-pass filtering, z-scoring and frame-aligned windowing of EEG.
//! - [`autodiff`]: the tensor/tape core every trainable component is built on.
//! - [`model`]: the convolution-transformer encoder, position-map decoder, loss and training loop.
//! - [`geometry`]: meshes, rigid alignment, UV position maps and Laplacian deformation.
//! - [`splat`]: mesh-bound Gaussian splats, their renderer and optimizer.
//! - [`synth`]: a synthetic paired EEG/geometry dataset with a known latent link.
//! - [`metrics`]: normalized error metrics over position-map sequences.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the math in numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity, clippy::cloned_ref_to_slice_refs)]

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod splat;
pub mod synth;

pub use error::{Error, Result};
