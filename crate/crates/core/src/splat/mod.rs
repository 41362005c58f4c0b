//! Gaussian splats bound to mesh faces: binding, SH colour, a differentiable
//! software rasterizer, image losses, optimization and pyramid blending.

mod image;
mod loss;
mod optimize;
mod render;
mod sh;
mod types;

#[cfg(test)]
mod tests;

pub use image::{pyramid_blend, Image, PYRAMID_LEVELS};
pub use loss::{columns, d_ssim, splat_training_loss, ssim, ssim_var, SplatLossParts, SSIM_SIGMA, SSIM_WINDOW};
pub use optimize::{
    init_splats, optimize_splats, splats_from_tensor, splats_to_tensor, SplatLossRecord, SplatOptimConfig, Triplet,
};
pub use render::{render, render_var, RenderOptions, RenderOutput, RenderStats, SIGMA_CUTOFF, TRANSMITTANCE_CUTOFF};
pub use sh::{sh_color, sh_degree, SH_C0};
pub use types::{
    bind_local_to_global, gaussian_eval, Camera, GaussianSplat, Projection, SplatLossWeights, WorldSplat, RAW_WIDTH,
    SH_COEFFS,
};
