use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use num_dual::{jacobian, DualNum, DualSVec64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::sh::{sh_basis, sh_color_unclamped, Real};
use super::types::{Camera, GaussianSplat, Projection, RAW_WIDTH, SH_COEFFS};
use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{face_frames, FaceFrame, TriMesh};

const NEAR: f64 = 1e-6;
const MIN_DET: f64 = 1e-18;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Pixels beyond this Mahalanobis radius (in σ) ignore a splat.
pub const SIGMA_CUTOFF: f64 = 3.0;
const TILE: usize = 16;

/// Screen-space quantities the compositor consumes, in this order.
const SCREEN: usize = 9;
const U: usize = 0;
const V: usize = 1;
const CA: usize = 2;
const CB: usize = 3;
const CC: usize = 4;
const OPACITY: usize = 5;
const COLOR: usize = 6;
/// Raw parameters that feed the screen quantities non-linearly.
const GEOM: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { background: [1.0; 3] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderStats {
    pub visible: usize,
    /// Splats whose centre lies at or behind the camera plane.
    pub behind_camera: usize,
    /// Splats projecting to a degenerate ellipse or entirely off screen.
    pub off_screen: usize,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    pub alpha: Vec<f32>,
    pub stats: RenderStats,
}

/// Per-splat camera constants shared by the plain and dual projection paths.
struct View {
    world_to_cam: Matrix3<f64>,
    cam_translation: Vector3<f64>,
    projection: Projection,
    eye: Option<Vector3<f64>>,
    forward: Vector3<f64>,
}

impl View {
    fn new(camera: &Camera) -> Self {
        Self {
            world_to_cam: camera.extrinsics.rotation,
            cam_translation: camera.extrinsics.translation,
            projection: camera.projection,
            eye: camera.center(),
            forward: camera.forward(),
        }
    }
}

fn matvec<D: Real>(m: &Matrix3<f64>, v: [D; 3]) -> [D; 3] {
    std::array::from_fn(|r| v[0] * m[(r, 0)] + v[1] * m[(r, 1)] + v[2] * m[(r, 2)])
}

/// Projection of one splat given actual (constrained) parameters.
///
/// Screen quantities are `[u, v, conic a, b, c, opacity, r, g, b]` with the
/// colour before clamping.
fn project<D: Real>(
    q: [D; 4],
    mu: [D; 3],
    scale: [D; 3],
    opacity: D,
    sh: &[[f64; 3]; SH_COEFFS],
    frame: &FaceFrame,
    view: &View,
) -> Projected<D> {
    let qn = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|v| v / qn);
    let two = 2.0;
    let rq = [
        [D::from(1.0) - (y * y + z * z) * two, (x * y - w * z) * two, (x * z + w * y) * two],
        [(x * y + w * z) * two, D::from(1.0) - (x * x + z * z) * two, (y * z - w * x) * two],
        [(x * z - w * y) * two, (y * z + w * x) * two, D::from(1.0) - (x * x + y * y) * two],
    ];
    // Columns of the world-space square-root covariance: R_face · R_q · diag(k s).
    let cam_frame = view.world_to_cam * frame.rotation;
    let m: [[D; 3]; 3] = std::array::from_fn(|col| {
        let local = [rq[0][col], rq[1][col], rq[2][col]];
        let c = matvec(&cam_frame, local);
        c.map(|v| v * scale[col] * frame.scale)
    });
    let cov = |i: usize, j: usize| m[0][i] * m[0][j] + m[1][i] * m[1][j] + m[2][i] * m[2][j];

    let offset = matvec(&frame.rotation, mu).map(|v| v * frame.scale);
    let world: [D; 3] = std::array::from_fn(|i| offset[i] + frame.centroid[i]);
    let cam = {
        let r = matvec(&view.world_to_cam, world);
        [r[0] + view.cam_translation[0], r[1] + view.cam_translation[1], r[2] + view.cam_translation[2]]
    };
    let depth = cam[2].re();

    // Local affine approximation of the projection.
    let (u, v, j) = match view.projection {
        Projection::Pinhole { fx, fy, cx, cy } => {
            let iz = cam[2].recip();
            let (xz, yz) = (cam[0] * iz, cam[1] * iz);
            let zero = D::from(0.0);
            (xz * fx + cx, yz * fy + cy, [[iz * fx, zero, -(xz * iz) * fx], [zero, iz * fy, -(yz * iz) * fy]])
        }
        Projection::Orthographic { scale: s, cx, cy } => {
            let (zero, sd) = (D::from(0.0), D::from(s));
            (cam[0] * s + cx, cam[1] * s + cy, [[sd, zero, zero], [zero, sd, zero]])
        }
    };
    let c3 = [[cov(0, 0), cov(0, 1), cov(0, 2)], [cov(0, 1), cov(1, 1), cov(1, 2)], [cov(0, 2), cov(1, 2), cov(2, 2)]];
    let jc: [[D; 3]; 2] = std::array::from_fn(|r| std::array::from_fn(|c| j[r][0] * c3[0][c] + j[r][1] * c3[1][c] + j[r][2] * c3[2][c]));
    let s2 = |r: usize, c: usize| jc[r][0] * j[c][0] + jc[r][1] * j[c][1] + jc[r][2] * j[c][2];
    let (s00, s01, s11) = (s2(0, 0), s2(0, 1), s2(1, 1));
    let det = s00 * s11 - s01 * s01;
    let idet = det.recip();

    // SH is evaluated in the face frame so appearance moves with the face.
    let dir_world: [D; 3] = match view.eye {
        Some(eye) => {
            let d = [world[0] - eye[0], world[1] - eye[1], world[2] - eye[2]];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            d.map(|v| v / n)
        }
        None => [view.forward[0], view.forward[1], view.forward[2]].map(D::from),
    };
    let dir_local = matvec(&frame.rotation.transpose(), dir_world);
    let basis = sh_basis(dir_local);
    let color = sh_color_unclamped(sh, &basis);

    Projected {
        q: [u, v, s11 * idet, -s01 * idet, s00 * idet, opacity, color[0], color[1], color[2]],
        depth,
        det,
        basis: basis.map(|b| b.re()),
    }
}

struct Projected<D> {
    q: [D; SCREEN],
    depth: f64,
    det: D,
    basis: [f64; SH_COEFFS],
}

/// A projected splat ready for compositing.
#[derive(Clone, Debug)]
struct Screen {
    splat: usize,
    depth: f64,
    q: [f64; SCREEN],
    color: [f64; 3],
    active: [bool; 3],
    /// Inclusive pixel bounds `(col0, col1, row0, row1)`.
    bounds: (usize, usize, usize, usize),
}

/// Derivatives kept for the backward pass.
#[derive(Clone, Debug)]
struct ScreenGrad {
    jac: SMatrix<f64, SCREEN, GEOM>,
    basis: [f64; SH_COEFFS],
}

/// Pixel bounds of the `SIGMA_CUTOFF` ellipse, or `None` if it misses the image.
fn bounds(q: &[f64; SCREEN], det: f64, h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
    // Covariance from the conic.
    let (s00, s11) = (q[CC] * det, q[CA] * det);
    let (rx, ry) = (SIGMA_CUTOFF * s00.sqrt(), SIGMA_CUTOFF * s11.sqrt());
    let c0 = (q[U] - rx - 0.5).ceil().max(0.0);
    let c1 = (q[U] + rx - 0.5).floor().min(w as f64 - 1.0);
    let r0 = (q[V] - ry - 0.5).ceil().max(0.0);
    let r1 = (q[V] + ry - 0.5).floor().min(h as f64 - 1.0);
    (c0 <= c1 && r0 <= r1 && c1 >= 0.0 && r1 >= 0.0).then_some((c0 as usize, c1 as usize, r0 as usize, r1 as usize))
}

fn splat_frames(splats_faces: &[usize], mesh: &TriMesh) -> Result<Vec<FaceFrame>> {
    let frames = face_frames(mesh)?;
    splats_faces
        .iter()
        .map(|&f| {
            frames.get(f).copied().ok_or_else(|| Error::Data(format!("splat bound to face {f}, mesh has {}", frames.len())))
        })
        .collect()
}

fn classify(q: &[f64; SCREEN], depth: f64, det: f64, camera: &Camera, stats: &mut RenderStats) -> Option<(usize, usize, usize, usize)> {
    if !(depth > NEAR) {
        stats.behind_camera += 1;
        return None;
    }
    if !(det > MIN_DET) || q.iter().any(|v| !v.is_finite()) {
        stats.off_screen += 1;
        return None;
    }
    let b = bounds(q, det, camera.height, camera.width);
    if b.is_none() {
        stats.off_screen += 1;
    } else {
        stats.visible += 1;
    }
    b
}

fn screen_from(splat: usize, q: [f64; SCREEN], depth: f64, b: (usize, usize, usize, usize)) -> Screen {
    let mut color = [0.0; 3];
    let mut active = [false; 3];
    for c in 0..3 {
        let v = q[COLOR + c];
        color[c] = v.clamp(0.0, 1.0);
        active[c] = (0.0..=1.0).contains(&v);
    }
    Screen { splat, depth, q, color, active, bounds: b }
}

fn sh_of_row(row: &[f64]) -> [[f64; 3]; SH_COEFFS] {
    std::array::from_fn(|k| std::array::from_fn(|c| row[GEOM + 3 * k + c]))
}

/// Project splats given as raw parameter rows, keeping the Jacobians of the
/// screen quantities with respect to the non-SH parameters.
fn project_raw(raw: &[f64], frames: &[FaceFrame], camera: &Camera) -> (Vec<Screen>, Vec<ScreenGrad>, RenderStats) {
    let view = View::new(camera);
    let per: Vec<(RenderStats, Option<(Screen, ScreenGrad)>)> = (0..frames.len())
        .into_par_iter()
        .map(|i| {
            let row = &raw[i * RAW_WIDTH..(i + 1) * RAW_WIDTH];
            let sh = sh_of_row(row);
            let mut depth = 0.0;
            let mut basis = [0.0; SH_COEFFS];
            let f = |p: SVector<DualSVec64<GEOM>, GEOM>| {
                let one = DualSVec64::<GEOM>::from(1.0);
                let pr = project(
                    [p[0], p[1], p[2], p[3]],
                    [p[4], p[5], p[6]],
                    [p[7].exp(), p[8].exp(), p[9].exp()],
                    (one + (-p[10]).exp()).recip(),
                    &sh,
                    &frames[i],
                    &view,
                );
                depth = pr.depth;
                basis = pr.basis;
                let mut out = SVector::<DualSVec64<GEOM>, { SCREEN + 1 }>::from_element(pr.det);
                for k in 0..SCREEN {
                    out[k] = pr.q[k];
                }
                out
            };
            let (val, jac) = jacobian(f, &SVector::<f64, GEOM>::from_column_slice(&row[..GEOM]));
            let q: [f64; SCREEN] = std::array::from_fn(|k| val[k]);
            let mut stats = RenderStats::default();
            let kept = classify(&q, depth, val[SCREEN], camera, &mut stats).map(|b| {
                (screen_from(i, q, depth, b), ScreenGrad { jac: jac.fixed_rows::<SCREEN>(0).into_owned(), basis })
            });
            (stats, kept)
        })
        .collect();
    let mut stats = RenderStats::default();
    let mut screens = Vec::new();
    let mut grads = Vec::new();
    for (st, kept) in per {
        stats.visible += st.visible;
        stats.behind_camera += st.behind_camera;
        stats.off_screen += st.off_screen;
        if let Some((s, g)) = kept {
            screens.push(s);
            grads.push(g);
        }
    }
    (screens, grads, stats)
}

/// Depth-sorted splat lists per tile.
struct Bins {
    tiles_x: usize,
    tiles_y: usize,
    lists: Vec<Vec<u32>>,
}

fn bin(screens: &[Screen], h: usize, w: usize) -> Bins {
    let (tiles_x, tiles_y) = (w.div_ceil(TILE), h.div_ceil(TILE));
    let mut order: Vec<usize> = (0..screens.len()).collect();
    order.sort_by(|&a, &b| screens[a].depth.total_cmp(&screens[b].depth).then(screens[a].splat.cmp(&screens[b].splat)));
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for i in order {
        let (c0, c1, r0, r1) = screens[i].bounds;
        for ty in r0 / TILE..=r1 / TILE {
            for tx in c0 / TILE..=c1 / TILE {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    Bins { tiles_x, tiles_y, lists }
}

/// `(alpha, gaussian, dx, dy)` of a splat at a pixel centre, if within the cutoff.
#[inline]
fn splat_alpha(s: &Screen, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
    let (dx, dy) = (px - s.q[U], py - s.q[V]);
    let d2 = s.q[CA] * dx * dx + 2.0 * s.q[CB] * dx * dy + s.q[CC] * dy * dy;
    if d2 > SIGMA_CUTOFF * SIGMA_CUTOFF {
        return None;
    }
    let g = (-0.5 * d2).exp();
    Some((s.q[OPACITY] * g, g, dx, dy))
}

/// Front-to-back compositing; returns planar RGB `[3, H, W]` and alpha `[H, W]`.
fn composite(screens: &[Screen], bins: &Bins, h: usize, w: usize, bg: [f64; 3]) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<(Vec<[f64; 3]>, Vec<f64>)> = (0..bins.tiles_y)
        .into_par_iter()
        .map(|ty| {
            let y0 = ty * TILE;
            let y1 = (y0 + TILE).min(h);
            let mut rgb = vec![[0.0; 3]; (y1 - y0) * w];
            let mut alpha = vec![0.0; (y1 - y0) * w];
            for y in y0..y1 {
                for x in 0..w {
                    let list = &bins.lists[ty * bins.tiles_x + x / TILE];
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    for &i in list {
                        let s = &screens[i as usize];
                        let Some((a, ..)) = splat_alpha(s, px, py) else { continue };
                        for k in 0..3 {
                            c[k] += t * a * s.color[k];
                        }
                        t *= 1.0 - a;
                        if t < TRANSMITTANCE_CUTOFF {
                            break;
                        }
                    }
                    let o = (y - y0) * w + x;
                    rgb[o] = std::array::from_fn(|k| c[k] + t * bg[k]);
                    alpha[o] = 1.0 - t;
                }
            }
            (rgb, alpha)
        })
        .collect();
    let mut planar = vec![0.0; 3 * h * w];
    let mut alpha = Vec::with_capacity(h * w);
    let mut p = 0;
    for (rgb, a) in rows {
        for (o, px) in rgb.iter().enumerate() {
            for k in 0..3 {
                planar[k * h * w + p + o] = px[k];
            }
        }
        p += rgb.len();
        alpha.extend(a);
    }
    (planar, alpha)
}

/// Gradient of a loss with respect to each screen's quantities, given the
/// gradient with respect to the planar RGB output.
fn composite_backward(screens: &[Screen], bins: &Bins, h: usize, w: usize, bg: [f64; 3], grad: &[f64]) -> Vec<[f64; SCREEN]> {
    let parts: Vec<Vec<[f64; SCREEN]>> = (0..bins.tiles_y)
        .into_par_iter()
        .map(|ty| {
            let mut acc = vec![[0.0; SCREEN]; screens.len()];
            let mut hits: Vec<(u32, f64, f64, f64, f64, f64)> = Vec::new();
            let y0 = ty * TILE;
            for y in y0..(y0 + TILE).min(h) {
                for x in 0..w {
                    let g: [f64; 3] = std::array::from_fn(|k| grad[k * h * w + y * w + x]);
                    if g == [0.0; 3] {
                        continue;
                    }
                    let list = &bins.lists[ty * bins.tiles_x + x / TILE];
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    hits.clear();
                    let mut t = 1.0;
                    for &i in list {
                        let s = &screens[i as usize];
                        let Some((a, gauss, dx, dy)) = splat_alpha(s, px, py) else { continue };
                        hits.push((i, a, gauss, dx, dy, t));
                        t *= 1.0 - a;
                        if t < TRANSMITTANCE_CUTOFF {
                            break;
                        }
                    }
                    // `after` is the colour composited behind the current splat,
                    // including the background, so no division by (1 - α) is needed.
                    let mut after = bg;
                    for &(i, a, gauss, dx, dy, t_i) in hits.iter().rev() {
                        let s = &screens[i as usize];
                        let d = &mut acc[i as usize];
                        let mut d_alpha = 0.0;
                        for k in 0..3 {
                            if s.active[k] {
                                d[COLOR + k] += g[k] * a * t_i;
                            }
                            d_alpha += g[k] * t_i * (s.color[k] - after[k]);
                            after[k] = s.color[k] * a + (1.0 - a) * after[k];
                        }
                        d[OPACITY] += d_alpha * gauss;
                        let da = d_alpha * a;
                        d[U] += da * (s.q[CA] * dx + s.q[CB] * dy);
                        d[V] += da * (s.q[CB] * dx + s.q[CC] * dy);
                        d[CA] -= 0.5 * da * dx * dx;
                        d[CB] -= da * dx * dy;
                        d[CC] -= 0.5 * da * dy * dy;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![[0.0; SCREEN]; screens.len()];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            for k in 0..SCREEN {
                t[k] += p[k];
            }
        }
    }
    total
}

fn check_inputs(splats: usize, camera: &Camera) -> Result<()> {
    camera.validate()?;
    if splats == 0 {
        return Err(Error::Data("no splats to render".into()));
    }
    Ok(())
}

/// Render splats bound to `mesh` as seen by `camera`, composited over the background.
pub fn render(splats: &[GaussianSplat], mesh: &TriMesh, camera: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    check_inputs(splats.len(), camera)?;
    for s in splats {
        s.validate()?;
    }
    let faces: Vec<usize> = splats.iter().map(|s| s.face).collect();
    let frames = splat_frames(&faces, mesh)?;
    let view = View::new(camera);
    let mut stats = RenderStats::default();
    let screens: Vec<Screen> = splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let pr = project(
                s.rotation.map(|v| v as f64),
                s.offset.map(|v| v as f64),
                s.scale.map(|v| v as f64),
                s.opacity as f64,
                &s.sh.map(|r| r.map(f64::from)),
                &frames[i],
                &view,
            );
            let b = classify(&pr.q, pr.depth, pr.det, camera, &mut stats)?;
            Some(screen_from(i, pr.q, pr.depth, b))
        })
        .collect();
    let (h, w) = (camera.height, camera.width);
    let bins = bin(&screens, h, w);
    let (planar, alpha) = composite(&screens, &bins, h, w, opts.background);
    Ok(RenderOutput {
        image: Image::from_planar(h, w, 3, &planar.iter().map(|&v| v as f32).collect::<Vec<_>>())?,
        alpha: alpha.iter().map(|&v| v as f32).collect(),
        stats,
    })
}

/// Differentiable render of raw splat rows `[N, RAW_WIDTH]` (see
/// [`GaussianSplat::to_raw`]); the output is planar RGB `[3, H, W]`.
pub fn render_var<T: Scalar>(
    tape: &mut Tape<T>,
    raw: Var,
    faces: &[usize],
    mesh: &TriMesh,
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<(Var, RenderStats)> {
    let shape = tape.shape(raw).to_vec();
    if shape != [faces.len(), RAW_WIDTH] {
        return Err(Error::dim("render", format!("raw splats {shape:?}, expected [{}, {RAW_WIDTH}]", faces.len())));
    }
    check_inputs(faces.len(), camera)?;
    let frames = splat_frames(faces, mesh)?;
    let raw_f64 = tape.value(raw).to_f64_vec();
    let (screens, grads, stats) = project_raw(&raw_f64, &frames, camera);
    let (h, w) = (camera.height, camera.width);
    let bins = bin(&screens, h, w);
    let bg = opts.background;
    let (planar, _) = composite(&screens, &bins, h, w, bg);
    let n = faces.len();
    let out = Tensor::new(&[3, h, w], planar.iter().map(|&v| T::from_f64(v)).collect())?;
    let var = tape.record(
        &[raw],
        out,
        Box::new(move |ctx| {
            let g = ctx.grad.to_f64_vec();
            let d_screen = composite_backward(&screens, &bins, h, w, bg, &g);
            let mut d = vec![T::zero(); n * RAW_WIDTH];
            for ((s, sg), ds) in screens.iter().zip(&grads).zip(&d_screen) {
                let row = &mut d[s.splat * RAW_WIDTH..(s.splat + 1) * RAW_WIDTH];
                let dq = SVector::<f64, SCREEN>::from_column_slice(ds);
                let dg = sg.jac.transpose() * dq;
                for p in 0..GEOM {
                    row[p] = T::from_f64(dg[p]);
                }
                for k in 0..SH_COEFFS {
                    for c in 0..3 {
                        row[GEOM + 3 * k + c] = T::from_f64(ds[COLOR + c] * sg.basis[k]);
                    }
                }
            }
            vec![Some(Tensor::new(&[n, RAW_WIDTH], d).expect("raw extent"))]
        }),
    );
    Ok((var, stats))
}
