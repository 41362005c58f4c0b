mod activation;
mod attention;
mod conv;
mod elementwise;
pub(crate) mod linear;
mod norm;

pub use activation::{elu, gelu, Activation, GeluMode};
pub use attention::{AttentionOutput, AttentionParams};
pub use norm::{BatchNormState, BN_MOMENTUM, NORM_EPS};
