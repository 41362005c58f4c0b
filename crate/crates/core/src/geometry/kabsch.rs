use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Proper rigid motion `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: [f32; 3]) -> [f32; 3] {
        let q = self.rotation * Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) + self.translation;
        [q.x as f32, q.y as f32, q.z as f32]
    }

    pub fn apply_all(&self, points: &[[f32; 3]]) -> Vec<[f32; 3]> {
        points.iter().map(|&p| self.apply(p)).collect()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Self) -> Self {
        Self {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares rotation and translation taking `source` onto `target`.
pub fn kabsch_align(source: &[[f32; 3]], target: &[[f32; 3]]) -> Result<RigidTransform> {
    let v = |p: &[f32; 3]| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
    kabsch_align_f64(
        &source.iter().map(v).collect::<Vec<_>>(),
        &target.iter().map(v).collect::<Vec<_>>(),
    )
}

pub fn kabsch_align_f64(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::dim(
            "kabsch_align",
            format!("{} source vs {} target points", source.len(), target.len()),
        ));
    }
    if source.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {}", source.len())));
    }
    let (mx, my) = (centroid(source), centroid(target));
    let mut h = Matrix3::zeros();
    for (x, y) in source.iter().zip(target) {
        h += (x - mx) * (y - my).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if s[order[1]] <= 1e-12 * s[order[0]].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!(
            "point cloud is collinear (singular values {:.3e}, {:.3e}, {:.3e})",
            s[0], s[1], s[2]
        )));
    }
    let v = vt.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let rotation = v * d * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: my - rotation * mx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, flat: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), flat * rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0)).into_inner()
    }

    fn rms(t: &RigidTransform, x: &[Vector3<f64>], y: &[Vector3<f64>]) -> f64 {
        let se: f64 = x.iter().zip(y).map(|(a, b)| (t.rotation * a + t.translation - b).norm_squared()).sum();
        (se / x.len() as f64).sqrt()
    }

    #[test]
    fn identity_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = cloud(&mut rng, 20, 1.0);
        let t = kabsch_align_f64(&x, &x).unwrap();
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-10);
        assert!(t.translation.norm() < 1e-10);
    }

    #[test]
    fn recovers_random_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = cloud(&mut rng, 30, 1.0);
            let r0 = random_rotation(&mut rng);
            let t0 = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let y: Vec<_> = x.iter().map(|p| r0 * p + t0).collect();
            let t = kabsch_align_f64(&x, &y).unwrap();
            assert!((t.rotation - r0).abs().max() < 1e-9);
            assert!((t.translation - t0).norm() < 1e-9);
            assert!(rms(&t, &x, &y) < 1e-9);
        }
    }

    #[test]
    fn mirrored_near_planar_target_still_gives_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = cloud(&mut rng, 40, 1e-3);
        let y: Vec<_> = x.iter().map(|p| Vector3::new(p.x, p.y, -p.z)).collect();
        let t = kabsch_align_f64(&x, &y).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-6);
        assert!(rms(&t, &x, &y) < 2e-3);
    }

    #[test]
    fn collinear_input_is_degenerate() {
        let x: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(kabsch_align_f64(&x, &x), Err(Error::Degenerate(_))));
        assert!(kabsch_align_f64(&x[..2], &x[..2]).is_err());
    }

    proptest! {
        #[test]
        fn always_proper_and_no_worse_than_identity(seed in any::<u64>(), mirror in any::<bool>(), noise in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = cloud(&mut rng, 12, 1.0);
            let r0 = random_rotation(&mut rng);
            let y: Vec<_> = x
                .iter()
                .map(|p| {
                    let q = r0 * p + Vector3::new(noise * rng.random::<f64>(), 0.3, -0.2);
                    if mirror { Vector3::new(-q.x, q.y, q.z) } else { q }
                })
                .collect();
            let t = kabsch_align_f64(&x, &y).unwrap();
            let rt = t.rotation.transpose() * t.rotation;
            prop_assert!((rt - Matrix3::identity()).abs().max() < 1e-6);
            prop_assert!((t.rotation.determinant() - 1.0).abs() < 1e-6);
            prop_assert!(rms(&t, &x, &y) <= rms(&RigidTransform::identity(), &x, &y) + 1e-12);
        }
    }
}
