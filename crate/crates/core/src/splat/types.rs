use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FaceFrame, RigidTransform};

pub const SH_COEFFS: usize = 16;

/// Width of one splat's row in the raw parameter matrix:
/// quaternion (4), offset (3), log-scale (3), opacity logit (1), SH (16·3).
pub const RAW_WIDTH: usize = 11 + 3 * SH_COEFFS;

const OPACITY_CLAMP: f64 = 1e-6;

/// A Gaussian expressed in the local frame of the face it is bound to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSplat {
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    /// Centre offset in face-frame units.
    pub offset: [f32; 3],
    pub scale: [f32; 3],
    pub opacity: f32,
    /// Real SH coefficients, degree ≤ 3, one RGB triple per basis function.
    pub sh: [[f32; 3]; SH_COEFFS],
    pub face: usize,
}

impl GaussianSplat {
    /// Isotropic splat at the face centroid with a flat colour.
    pub fn flat(face: usize, scale: f32, opacity: f32, rgb: [f32; 3]) -> Self {
        let mut sh = [[0.0; 3]; SH_COEFFS];
        for c in 0..3 {
            sh[0][c] = ((rgb[c] as f64 - 0.5) / super::sh::SH_C0) as f32;
        }
        Self {
            rotation: [1.0, 0.0, 0.0, 0.0],
            offset: [0.0; 3],
            scale: [scale; 3],
            opacity,
            sh,
            face,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rotation.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("splat on face {}: quaternion norm {n}", self.face)));
        }
        if self.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Data(format!("splat on face {}: scale {:?} not positive", self.face, self.scale)));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Data(format!("splat on face {}: opacity {} outside [0, 1]", self.face, self.opacity)));
        }
        Ok(())
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation.map(|v| v as f64);
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }

    /// Unconstrained parameter row: the optimizer works on log-scales and an
    /// opacity logit so positivity and `[0, 1]` hold by construction.
    pub fn to_raw(&self) -> [f64; RAW_WIDTH] {
        let mut r = [0.0; RAW_WIDTH];
        for i in 0..4 {
            r[i] = self.rotation[i] as f64;
        }
        for i in 0..3 {
            r[4 + i] = self.offset[i] as f64;
            r[7 + i] = (self.scale[i] as f64).ln();
        }
        let o = (self.opacity as f64).clamp(OPACITY_CLAMP, 1.0 - OPACITY_CLAMP);
        r[10] = (o / (1.0 - o)).ln();
        for k in 0..SH_COEFFS {
            for c in 0..3 {
                r[11 + 3 * k + c] = self.sh[k][c] as f64;
            }
        }
        r
    }

    pub fn from_raw(raw: &[f64], face: usize) -> Result<Self> {
        if raw.len() != RAW_WIDTH {
            return Err(Error::dim("splat", format!("raw row has {} values, expected {RAW_WIDTH}", raw.len())));
        }
        let n = raw[..4].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return Err(Error::Data(format!("splat on face {face}: zero quaternion")));
        }
        let mut sh = [[0.0; 3]; SH_COEFFS];
        for (k, row) in sh.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = raw[11 + 3 * k + c] as f32;
            }
        }
        Ok(Self {
            rotation: std::array::from_fn(|i| (raw[i] / n) as f32),
            offset: std::array::from_fn(|i| raw[4 + i] as f32),
            scale: std::array::from_fn(|i| raw[7 + i].exp() as f32),
            opacity: (1.0 / (1.0 + (-raw[10]).exp())) as f32,
            sh,
            face,
        })
    }
}

/// A splat placed in world space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldSplat {
    pub rotation: UnitQuaternion<f64>,
    pub center: Vector3<f64>,
    pub scale: Vector3<f64>,
}

/// `r' = R r`, `μ' = k R μ + T`, `s' = k s`.
pub fn bind_local_to_global(splat: &GaussianSplat, frame: &FaceFrame) -> WorldSplat {
    let frame_rot = UnitQuaternion::from_matrix(&frame.rotation);
    let mu = Vector3::new(splat.offset[0] as f64, splat.offset[1] as f64, splat.offset[2] as f64);
    let s = Vector3::new(splat.scale[0] as f64, splat.scale[1] as f64, splat.scale[2] as f64);
    WorldSplat {
        rotation: frame_rot * splat.quaternion(),
        center: frame.scale * (frame.rotation * mu) + frame.centroid,
        scale: frame.scale * s,
    }
}

/// Unnormalized density `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))` with `Σ = R diag(s²) Rᵀ`.
pub fn gaussian_eval(x: &Vector3<f64>, center: &Vector3<f64>, rotation: &UnitQuaternion<f64>, scale: &Vector3<f64>) -> f64 {
    let local = rotation.inverse() * (x - center);
    let q: f64 = (0..3).map(|i| (local[i] / scale[i]).powi(2)).sum();
    (-0.5 * q).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// Pixel coordinates `u = fx·x/z + cx`, `v = fy·y/z + cy`.
    Pinhole { fx: f64, fy: f64, cx: f64, cy: f64 },
    /// `u = scale·x + cx`, `v = scale·y + cy`.
    Orthographic { scale: f64, cx: f64, cy: f64 },
}

/// Camera looking along its local +z with +y pointing down the image.
/// Pixel `(row, col)` has its centre at `(col + 0.5, row + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// World → camera.
    pub extrinsics: RigidTransform,
    pub projection: Projection,
    pub height: usize,
    pub width: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("camera resolution {}x{}", self.height, self.width)));
        }
        let ok = match self.projection {
            Projection::Pinhole { fx, fy, .. } => fx > 0.0 && fy > 0.0,
            Projection::Orthographic { scale, .. } => scale > 0.0,
        };
        if !ok {
            return Err(Error::Config(format!("camera focal/scale must be positive: {:?}", self.projection)));
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>, projection: Projection, height: usize, width: usize) -> Result<Self> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::Config("camera eye equals target".into()))?;
        let x = z.cross(&up).try_normalize(1e-12).ok_or_else(|| Error::Config("camera up is parallel to the view axis".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self {
            extrinsics: RigidTransform { rotation, translation: -(rotation * eye) },
            projection,
            height,
            width,
        })
    }

    /// Centred pinhole with the given vertical field of view.
    pub fn pinhole_fov(fov_y: f64, height: usize, width: usize) -> Projection {
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Projection::Pinhole { fx: f, fy: f, cx: 0.5 * width as f64, cy: 0.5 * height as f64 }
    }

    /// World-space optical centre; `None` for orthographic cameras.
    pub fn center(&self) -> Option<Vector3<f64>> {
        match self.projection {
            Projection::Pinhole { .. } => Some(-(self.extrinsics.rotation.transpose() * self.extrinsics.translation)),
            Projection::Orthographic { .. } => None,
        }
    }

    /// World-space viewing axis.
    pub fn forward(&self) -> Vector3<f64> {
        self.extrinsics.rotation.row(2).transpose()
    }

    /// The same view of a scene after it has been moved by `motion`.
    pub fn following(&self, motion: &RigidTransform) -> Self {
        Self { extrinsics: motion.inverse().then(&self.extrinsics), ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplatLossWeights {
    /// Mix between L1 and D-SSIM.
    pub lambda: f64,
    pub lambda_pos: f64,
    pub lambda_scale: f64,
    pub eps_pos: f64,
    pub eps_scale: f64,
}

impl Default for SplatLossWeights {
    fn default() -> Self {
        Self { lambda: 0.2, lambda_pos: 0.01, lambda_scale: 0.1, eps_pos: 1.0, eps_scale: 0.6 }
    }
}

impl SplatLossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.eps_pos > 0.0 && self.eps_scale > 0.0) {
            return Err(Error::Config("regularizer thresholds must be positive".into()));
        }
        if !(self.lambda_pos >= 0.0 && self.lambda_scale >= 0.0) {
            return Err(Error::Config("regularizer weights must be non-negative".into()));
        }
        Ok(())
    }
}
