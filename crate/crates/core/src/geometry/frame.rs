use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::mesh::TriMesh;
use crate::error::{Error, Result};

/// Local frame of a triangle used to bind splats to it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceFrame {
    /// Columns: first edge direction, in-plane perpendicular, unit normal.
    pub rotation: Matrix3<f64>,
    /// Face centroid.
    pub centroid: Vector3<f64>,
    /// `sqrt(2 · area)`; scales linearly with the triangle.
    pub scale: f64,
}

pub fn face_frame(mesh: &TriMesh, face: usize) -> Result<FaceFrame> {
    let p = mesh.face_points(face).map(|q| Vector3::new(q[0], q[1], q[2]));
    let e1 = p[1] - p[0];
    let n = e1.cross(&(p[2] - p[0]));
    let double_area = n.norm();
    if !(double_area > 2.0 * super::mesh::MIN_FACE_AREA) || e1.norm() == 0.0 {
        return Err(Error::Degenerate(format!("face {face} has area {:e}", 0.5 * double_area)));
    }
    let e1 = e1 / e1.norm();
    let n = n / double_area;
    Ok(FaceFrame {
        rotation: Matrix3::from_columns(&[e1, n.cross(&e1), n]),
        centroid: (p[0] + p[1] + p[2]) / 3.0,
        scale: double_area.sqrt(),
    })
}

pub fn face_frames(mesh: &TriMesh) -> Result<Vec<FaceFrame>> {
    (0..mesh.faces.len()).map(|f| face_frame(mesh, f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    fn unit_right() -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn unit_right_triangle() {
        let f = face_frame(&unit_right(), 0).unwrap();
        assert!((f.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!((f.centroid - Vector3::new(1.0 / 3.0, 1.0 / 3.0, 0.0)).norm() < 1e-12);
        assert!((f.scale - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn similarity_equivariance(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0, angle in -3.0f64..3.0,
            s in 0.1f64..10.0, tx in -3.0f64..3.0,
            p in prop::array::uniform9(-1.0f32..1.0),
        ) {
            let mut m = unit_right();
            m.vertices = vec![[p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], p[8]]];
            prop_assume!(m.face_area(0) > 1e-3);
            let base = face_frame(&m, 0).unwrap();
            let r0 = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(ax, ay, az)), angle).into_inner();
            let t0 = Vector3::new(tx, -tx, 0.5);
            let moved = m.with_vertices(m.vertices.iter().map(|q| {
                let v = r0 * Vector3::new(q[0] as f64, q[1] as f64, q[2] as f64) * s + t0;
                [v.x as f32, v.y as f32, v.z as f32]
            }).collect());
            let f = face_frame(&moved, 0).unwrap();
            prop_assert!((f.rotation - r0 * base.rotation).abs().max() < 1e-4);
            prop_assert!((f.centroid - (r0 * base.centroid * s + t0)).norm() < 1e-4 * (1.0 + s));
            prop_assert!((f.scale - s * base.scale).abs() < 1e-4 * s);
            prop_assert!((f.rotation.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
