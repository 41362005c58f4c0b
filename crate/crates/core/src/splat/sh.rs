use num_dual::DualNum;

use super::types::SH_COEFFS;

/// Scalar type the projection code is generic over: `f64`, or a dual number
/// carrying derivatives with respect to the raw splat parameters.
pub(crate) trait Real: DualNum<Primitive = f64> + Copy {}
impl<D: DualNum<Primitive = f64> + Copy> Real for D {}

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Real spherical harmonics up to degree 3 at a unit direction, ordered by
/// degree then order `-l..=l` (Condon–Shortley phase included).
pub(crate) fn sh_basis<D: Real>(d: [D; 3]) -> [D; SH_COEFFS] {
    let [x, y, z] = d;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let one = D::from(1.0);
    [
        one * SH_C0,
        y * (-SH_C1),
        z * SH_C1,
        x * (-SH_C1),
        x * y * SH_C2[0],
        y * z * SH_C2[1],
        (zz * 2.0 - xx - yy) * SH_C2[2],
        x * z * SH_C2[3],
        (xx - yy) * SH_C2[4],
        y * (xx * 3.0 - yy) * SH_C3[0],
        x * y * z * SH_C3[1],
        y * (zz * 4.0 - xx - yy) * SH_C3[2],
        z * (zz * 2.0 - xx * 3.0 - yy * 3.0) * SH_C3[3],
        x * (zz * 4.0 - xx - yy) * SH_C3[4],
        z * (xx - yy) * SH_C3[5],
        x * (xx - yy * 3.0) * SH_C3[6],
    ]
}

/// Colour before clamping: `Σ_k Y_k(dir) c_k + 0.5`.
pub(crate) fn sh_color_unclamped<D: Real>(coeffs: &[[f64; 3]; SH_COEFFS], basis: &[D; SH_COEFFS]) -> [D; 3] {
    std::array::from_fn(|c| {
        let mut acc = D::from(0.5);
        for k in 0..SH_COEFFS {
            acc += basis[k] * coeffs[k][c];
        }
        acc
    })
}

/// RGB seen along `view_dir` (normalized here), clamped to `[0, 1]`.
pub fn sh_color(coeffs: &[[f32; 3]; SH_COEFFS], view_dir: [f64; 3]) -> [f64; 3] {
    let n = view_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let basis = sh_basis(view_dir.map(|v| v / n));
    sh_color_unclamped(&coeffs.map(|r| r.map(f64::from)), &basis).map(|v| v.clamp(0.0, 1.0))
}

pub fn sh_degree(k: usize) -> usize {
    (k as f64).sqrt() as usize
}
