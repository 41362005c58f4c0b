//! Cross-cutting renderer and optimizer checks.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{check_gradients, GradCheckConfig, Tape, Tensor};
use crate::geometry::{RigidTransform, TriMesh};

/// Triangles parallel to the image plane with centroids on the optical axis
/// at the given depths (z); every face frame is the identity rotation.
fn stacked_triangles(zs: &[f32]) -> TriMesh {
    let mut v = Vec::new();
    let mut f = Vec::new();
    for (i, &z) in zs.iter().enumerate() {
        v.extend([[-1.0, -1.0, z], [2.0, -1.0, z], [-1.0, 2.0, z]]);
        let b = 3 * i as u32;
        f.push([b, b + 1, b + 2]);
    }
    let uv = v.iter().map(|p: &[f32; 3]| [p[0] * 0.1 + 0.5, p[1] * 0.1 + 0.5]).collect();
    TriMesh::new(v, f.clone(), uv, f).unwrap()
}

fn front_camera(size: usize) -> Camera {
    let proj = Camera::pinhole_fov(0.6, size, size);
    Camera::look_at(Vector3::new(0.0, 0.0, 5.0), Vector3::zeros(), Vector3::y(), proj, size, size).unwrap()
}

fn random_sh(rng: &mut ChaCha8Rng, amp: f32) -> [[f32; 3]; SH_COEFFS] {
    std::array::from_fn(|k| std::array::from_fn(|_| if k == 0 { rng.random_range(-1.0..1.0) } else { rng.random_range(-amp..amp) }))
}

fn random_splat(rng: &mut ChaCha8Rng, face: usize, scale: std::ops::Range<f32>) -> GaussianSplat {
    let q: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = q.iter().map(|v| v * v).sum::<f32>().sqrt();
    GaussianSplat {
        rotation: q.map(|v| v / n),
        offset: std::array::from_fn(|_| rng.random_range(-0.2..0.2)),
        scale: std::array::from_fn(|_| rng.random_range(scale.clone())),
        opacity: rng.random_range(0.3..0.9),
        sh: random_sh(rng, 0.1),
        face,
    }
}

#[test]
fn single_opaque_splat_shows_its_colour() {
    let mesh = stacked_triangles(&[0.0]);
    let cam = front_camera(15);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = GaussianSplat::flat(0, 0.05, 1.0, [0.0; 3]);
    s.sh = random_sh(&mut rng, 0.2);
    let out = render(&[s.clone()], &mesh, &cam, &RenderOptions::default()).unwrap();
    // View direction from the camera towards the splat, in the (identity) face frame.
    let expect = sh_color(&s.sh, [0.0, 0.0, -1.0]);
    for c in 0..3 {
        assert!((out.image.get(7, 7, c) as f64 - expect[c]).abs() < 1e-6);
    }
    assert!((out.alpha[7 * 15 + 7] - 1.0).abs() < 1e-6);
    assert_eq!(out.stats.visible, 1);
    // Far from the splat only the white background remains.
    assert_eq!(out.image.get(0, 0, 0), 1.0);
    assert_eq!(out.alpha[0], 0.0);
}

#[test]
fn two_splat_compositing_matches_closed_form() {
    let mesh = stacked_triangles(&[0.0, -1.0]);
    let cam = front_camera(15);
    let (o1, o2) = (0.6f32, 0.7f32);
    let near = GaussianSplat::flat(0, 0.3, o1, [1.0, 0.0, 0.0]);
    let far = GaussianSplat::flat(1, 0.3, o2, [0.0, 0.0, 1.0]);
    for bg in [[0.0; 3], [1.0; 3]] {
        let opts = RenderOptions { background: bg };
        // Input order must not matter: compositing sorts by depth.
        for splats in [vec![near.clone(), far.clone()], vec![far.clone(), near.clone()]] {
            let out = render(&splats, &mesh, &cam, &opts).unwrap();
            let (a1, a2) = (o1 as f64, o2 as f64);
            let c1 = [1.0, 0.0, 0.0];
            let c2 = [0.0, 0.0, 1.0];
            for k in 0..3 {
                let expect = c1[k] * a1 + c2[k] * a2 * (1.0 - a1) + bg[k] * (1.0 - a1) * (1.0 - a2);
                assert!((out.image.get(7, 7, k) as f64 - expect).abs() < 1e-6, "channel {k}");
            }
            assert!((out.alpha[7 * 15 + 7] as f64 - (1.0 - (1.0 - a1) * (1.0 - a2))).abs() < 1e-6);
        }
    }
}

fn bumpy_mesh() -> TriMesh {
    TriMesh::uv_grid(6, [0.1, 0.1], [0.9, 0.9], |u, v| {
        let (x, y) = (2.0 * u - 1.0, 2.0 * v - 1.0);
        [x, y, 0.3 * (1.0 - x * x - y * y).max(0.0).sqrt() + 0.05 * (3.0 * x).sin()]
    })
}

fn random_scene(seed: u64) -> (TriMesh, Vec<GaussianSplat>) {
    let mesh = bumpy_mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = (0..mesh.faces.len()).map(|f| random_splat(&mut rng, f, 0.2..0.8)).collect();
    (mesh, splats)
}

#[test]
fn rigid_co_transform_leaves_image_unchanged() {
    let (mesh, splats) = random_scene(3);
    let proj = Camera::pinhole_fov(0.7, 40, 48);
    let cam = Camera::look_at(Vector3::new(0.3, -0.2, 3.0), Vector3::zeros(), Vector3::y(), proj, 40, 48).unwrap();
    let base = render(&splats, &mesh, &cam, &RenderOptions::default()).unwrap();
    assert!(base.stats.visible > 10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..3 {
        let axis = Unit::new_normalize(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let g = RigidTransform {
            rotation: *Rotation3::from_axis_angle(&axis, rng.random_range(-2.0..2.0)).matrix(),
            translation: Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
        };
        let moved = mesh.with_vertices(g.apply_all(&mesh.vertices));
        let out = render(&splats, &moved, &cam.following(&g), &RenderOptions::default()).unwrap();
        assert!(out.image.max_abs_diff(&base.image) < 1e-5, "diff {}", out.image.max_abs_diff(&base.image));
    }
    // Same with an orthographic camera.
    let ortho = Camera { projection: Projection::Orthographic { scale: 15.0, cx: 24.0, cy: 20.0 }, ..cam };
    let base = render(&splats, &mesh, &ortho, &RenderOptions::default()).unwrap();
    let g = RigidTransform { rotation: *Rotation3::from_euler_angles(0.3, -0.4, 1.1).matrix(), translation: Vector3::new(1.0, 2.0, -0.5) };
    let moved = mesh.with_vertices(g.apply_all(&mesh.vertices));
    let out = render(&splats, &moved, &ortho.following(&g), &RenderOptions::default()).unwrap();
    assert!(out.image.max_abs_diff(&base.image) < 1e-5);
}

#[test]
fn splats_behind_camera_are_culled_and_counted() {
    let mesh = stacked_triangles(&[0.0, 10.0]);
    let cam = front_camera(15);
    let splats = vec![GaussianSplat::flat(0, 0.3, 0.5, [0.2; 3]), GaussianSplat::flat(1, 0.3, 0.5, [0.9; 3])];
    let out = render(&splats, &mesh, &cam, &RenderOptions::default()).unwrap();
    assert_eq!(out.stats.behind_camera, 1);
    assert_eq!(out.stats.visible, 1);
    let mut bad = splats[0].clone();
    bad.face = 7;
    assert!(render(&[bad], &mesh, &cam, &RenderOptions::default()).is_err());
}

#[test]
fn alpha_stays_in_unit_interval() {
    for seed in 0..5 {
        let (mesh, splats) = random_scene(seed);
        let out = render(&splats, &mesh, &front_camera(24), &RenderOptions::default()).unwrap();
        assert!(out.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        assert!(out.image.data.iter().all(|v| (0.0..=1.0 + 1e-6).contains(v)));
    }
}

#[test]
fn differentiable_render_matches_plain_render() {
    let (mesh, splats) = random_scene(8);
    let cam = front_camera(20);
    let plain = render(&splats, &mesh, &cam, &RenderOptions::default()).unwrap();
    let mut tape = Tape::<f64>::new();
    let raw = tape.param(Tensor::new(&[splats.len(), RAW_WIDTH], splats.iter().flat_map(|s| s.to_raw()).collect()).unwrap());
    let faces: Vec<usize> = splats.iter().map(|s| s.face).collect();
    let (img, stats) = render_var(&mut tape, raw, &faces, &mesh, &cam, &RenderOptions::default()).unwrap();
    assert_eq!(stats, plain.stats);
    let diff = Image::from_tensor(tape.value(img)).unwrap().max_abs_diff(&plain.image);
    assert!(diff < 1e-5, "{diff}");
}

/// Splats wide enough that every pixel is well inside each 3σ ellipse, so
/// finite differences never straddle the cutoff.
fn smooth_gradcheck(seed: u64, camera: Camera) {
    let mesh = stacked_triangles(&[0.0, -0.5, -1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats: Vec<GaussianSplat> = (0..3).map(|f| random_splat(&mut rng, f, 0.35..0.6)).collect();
    let raw = Tensor::<f64>::new(&[3, RAW_WIDTH], splats.iter().flat_map(|s| s.to_raw()).collect()).unwrap();
    let target = Image::new(16, 16, 3, (0..16 * 16 * 3).map(|_| rng.random()).collect()).unwrap().to_tensor::<f64>();
    let weights = SplatLossWeights { eps_pos: 0.1, eps_scale: 0.5, ..Default::default() };
    let faces = [0, 1, 2];
    let report = check_gradients(
        &[raw],
        |tape, v| {
            let (img, stats) = render_var(tape, v[0], &faces, &mesh, &camera, &RenderOptions::default()).unwrap();
            assert_eq!(stats.visible, 3);
            splat_training_loss(tape, img, &target, v[0], &weights).unwrap().total
        },
        &GradCheckConfig { tol: 1e-3, seed, ..Default::default() },
    );
    assert!(report.passed, "seed {seed}: {report}");
}

#[test]
fn render_loss_gradients_match_finite_differences() {
    for seed in 0..3 {
        smooth_gradcheck(seed, front_camera(16));
    }
    let ortho = Camera { projection: Projection::Orthographic { scale: 2.5, cx: 8.0, cy: 8.0 }, ..front_camera(16) };
    smooth_gradcheck(9, ortho);
}

#[test]
fn zero_steps_leave_splats_unchanged() {
    let (mesh, splats) = random_scene(5);
    let cam = front_camera(16);
    let image = render(&splats, &mesh, &cam, &RenderOptions::default()).unwrap().image;
    let cfg = SplatOptimConfig { steps: 0, ..Default::default() };
    let (out, hist) = optimize_splats(&splats, &[Triplet { mesh, camera: cam, image }], &cfg).unwrap();
    assert!(hist.is_empty());
    for (a, b) in out.iter().zip(&splats) {
        for i in 0..3 {
            assert!((a.scale[i] - b.scale[i]).abs() < 1e-6 * b.scale[i]);
            assert!((a.offset[i] - b.offset[i]).abs() < 1e-7);
        }
        assert!((a.opacity - b.opacity).abs() < 1e-6);
        assert_eq!(a.sh, b.sh);
    }
}

/// Hard-edged render of one flat-coloured triangle on white, by a
/// point-in-triangle test at pixel centres.
fn flat_triangle_target(corners: [[f64; 3]; 3], cam: &Camera, color: [f32; 3]) -> Image {
    let (scale, cx, cy) = match cam.projection {
        Projection::Orthographic { scale, cx, cy } => (scale, cx, cy),
        Projection::Pinhole { .. } => unreachable!(),
    };
    let screen: Vec<[f64; 2]> = corners
        .iter()
        .map(|c| {
            let p = cam.extrinsics.rotation * Vector3::from(*c) + cam.extrinsics.translation;
            [scale * p.x + cx, scale * p.y + cy]
        })
        .collect();
    let inside = |x: f64, y: f64| {
        let edge = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
        let d = [edge(screen[0], screen[1]), edge(screen[1], screen[2]), edge(screen[2], screen[0])];
        d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
    };
    Image::from_fn(cam.height, cam.width, 3, |r, c, k| if inside(c as f64 + 0.5, r as f64 + 0.5) { color[k] } else { 1.0 })
}

#[test]
fn flat_triangle_overfit_drops_l1() {
    let corners = [[-1.0, -0.8, 0.0], [1.1, -0.6, 0.0], [-0.2, 1.0, 0.0]];
    let proj = Projection::Orthographic { scale: 26.0, cx: 32.0, cy: 32.0 };
    let cam = Camera::look_at(Vector3::new(0.0, 0.0, 5.0), Vector3::zeros(), Vector3::y(), proj, 64, 64).unwrap();
    let target = flat_triangle_target(corners, &cam, [0.9, 0.3, 0.1]);
    let mesh = TriMesh::subdivided_triangle(corners, 12);
    // The full 2000-step run lives in the acceptance suite.
    let cfg = SplatOptimConfig { steps: 400, ..Default::default() };
    let (out, hist) = optimize_splats(&init_splats(&mesh, 0.7, 0.5), &[Triplet { mesh: mesh.clone(), camera: cam, image: target.clone() }], &cfg).unwrap();
    assert!(hist[0].l1 > 0.1);
    let l1 = render(&out, &mesh, &cam, &RenderOptions::default()).unwrap().image.mean_abs_diff(&target);
    assert!(l1 < 0.02, "L1 after 400 steps: {l1}");
}

#[test]
fn learned_splats_follow_a_rigidly_moved_mesh() {
    let (mesh, truth) = random_scene(11);
    let cam = front_camera(48);
    let target = render(&truth, &mesh, &cam, &RenderOptions::default()).unwrap().image;
    let init: Vec<_> = truth.iter().map(|s| GaussianSplat::flat(s.face, 0.5, 0.5, [0.5; 3])).collect();
    let cfg = SplatOptimConfig { steps: 300, ..Default::default() };
    let (learned, _) = optimize_splats(&init, &[Triplet { mesh: mesh.clone(), camera: cam, image: target }], &cfg).unwrap();

    // Move the mesh but keep the camera: the learned splats must follow.
    let g = RigidTransform {
        rotation: *Rotation3::from_euler_angles(0.15, -0.2, 0.3).matrix(),
        translation: Vector3::new(0.1, -0.05, 0.2),
    };
    let moved = mesh.with_vertices(g.apply_all(&mesh.vertices));
    let reference = render(&truth, &moved, &cam, &RenderOptions::default()).unwrap().image;
    let got = render(&learned, &moved, &cam, &RenderOptions::default()).unwrap().image;
    let d = d_ssim(&got, &reference).unwrap();
    assert!(d < 0.05, "D-SSIM on moved frame: {d}");
    // Splats left in place would not match.
    let stale = render(&learned, &mesh, &cam, &RenderOptions::default()).unwrap().image;
    assert!(d_ssim(&stale, &reference).unwrap() > d);
}
