//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Ops are methods on [`Tape`] that evaluate eagerly and record a
//! vector-Jacobian product. All kernels are generic over [`Scalar`] so the
//! same graph runs in `f32` for training and `f64` for [`gradcheck`].

pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
mod optim;
mod params;
pub mod suite;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{check_gradients, check_gradients_named, GradCheckConfig, GradCheckReport, ParamReport};
pub use ops::{Activation, AttentionOutput, AttentionParams, BatchNormState, GeluMode};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamStore, ParamVars};
pub use suite::{layer_case_names, layer_gradient_suite};
pub use tape::{BackwardCtx, BackwardFn, Tape, Var};
pub use tensor::{Scalar, Tensor};
#[allow(unused_imports)]
pub(crate) use tensor::c;
