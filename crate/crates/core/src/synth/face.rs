use std::f64::consts::PI;

use rand::Rng;

use super::{stream, SynthConfig};
use crate::error::Result;
use crate::geometry::{PositionMap, ShapeBasis, TriMesh, UvRaster};

/// Sinusoids summed per latent dimension.
const LATENT_PARTIALS: usize = 8;
/// UV margin kept free around the chart.
const UV_MARGIN: f64 = 0.02;
/// Fraction of the half-turn spanned in longitude and latitude.
const LON_SPAN: f64 = 0.95;
const LAT_SPAN: f64 = 0.9;

const PURPOSE_LATENT: u64 = 1;

/// Face proxy mesh plus its orthogonal deformation bases.
#[derive(Clone, Debug)]
pub struct FaceModel {
    pub template: TriMesh,
    pub basis: ShapeBasis,
}

impl FaceModel {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        let spec = &cfg.base_mesh;
        let [a, b, c] = spec.radii;
        let chart = |u: f64, v: f64| ((u - UV_MARGIN) / (1.0 - 2.0 * UV_MARGIN), (v - UV_MARGIN) / (1.0 - 2.0 * UV_MARGIN));
        let surface = |u: f64, v: f64| {
            let (s, t) = chart(u, v);
            let lon = (s - 0.5) * PI * LON_SPAN;
            let lat = (t - 0.5) * PI * LAT_SPAN;
            [a * lat.cos() * lon.sin(), b * lat.sin(), c * lat.cos() * lon.cos()]
        };
        let template = TriMesh::uv_grid(spec.grid, [UV_MARGIN; 2], [1.0 - UV_MARGIN; 2], surface);

        // Low-frequency cosine fields pushed along the surface normal.
        let n = template.vertices.len();
        let modes = low_frequency_modes(cfg.latent_dim);
        let mut fields: Vec<Vec<f64>> = Vec::with_capacity(modes.len());
        for &(p, q) in &modes {
            let mut f = Vec::with_capacity(3 * n);
            for (x, uv) in template.vertices.iter().zip(&template.uv) {
                let (s, t) = chart(uv[0] as f64, uv[1] as f64);
                let w = (PI * p as f64 * s).cos() * (PI * q as f64 * t).cos();
                let normal = [x[0] as f64 / (a * a), x[1] as f64 / (b * b), x[2] as f64 / (c * c)];
                let len = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                f.extend(normal.map(|v| w * v / len));
            }
            fields.push(f);
        }
        gram_schmidt(&mut fields);
        for f in &mut fields {
            let peak = f.chunks_exact(3).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
            f.iter_mut().for_each(|v| *v *= spec.deformation_amplitude / peak);
        }
        let d = cfg.latent_dim;
        let mut components = vec![0.0f32; 3 * n * d];
        for (k, f) in fields.iter().enumerate() {
            for (i, v) in f.iter().enumerate() {
                components[i * d + k] = *v as f32;
            }
        }
        let basis = ShapeBasis::new(template.vertices.clone(), components, d)?;
        Ok(Self { template, basis })
    }

    pub fn vertices(&self, latent: &[f32]) -> Vec<[f32; 3]> {
        self.basis.evaluate(latent)
    }

    pub fn mesh(&self, latent: &[f32]) -> TriMesh {
        self.template.with_vertices(self.vertices(latent))
    }
}

/// `(p, q)` cosine orders in order of increasing total frequency, skipping the constant.
fn low_frequency_modes(count: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(count);
    let mut s = 1;
    while out.len() < count {
        for p in 0..=s {
            if out.len() < count {
                out.push((p, s - p));
            }
        }
        s += 1;
    }
    out
}

fn gram_schmidt(vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        let (done, rest) = vs.split_at_mut(i);
        let v = &mut rest[0];
        for u in done.iter() {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
        }
        let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= len);
    }
}

/// Row-major `[frames × D]` latents in `[0, 1]` for one trial, covering the
/// lead-in and every video frame.
///
/// Each dimension is a random-phase sum of sinusoids inside the latent band,
/// normalized to unit variance and squashed by `tanh`.
pub fn latent_trajectory(cfg: &SynthConfig, trial: usize) -> Vec<f32> {
    let mut rng = stream(cfg.seed, Some(trial), PURPOSE_LATENT);
    let [lo, hi] = cfg.latent_band;
    let d = cfg.latent_dim;
    let partials: Vec<Vec<(f64, f64, f64)>> = (0..d)
        .map(|_| {
            (0..LATENT_PARTIALS)
                .map(|_| (rng.random_range(0.5..1.0), rng.random_range(lo..hi), rng.random_range(0.0..2.0 * PI)))
                .collect()
        })
        .collect();
    let frames = cfg.lead_in_frames() + cfg.frames_per_trial();
    let mut out = Vec::with_capacity(frames * d);
    for k in 0..frames {
        let t = k as f64 / cfg.fps;
        for p in &partials {
            let norm = (p.iter().map(|(a, _, _)| a * a).sum::<f64>() / 2.0).sqrt();
            let z: f64 = p.iter().map(|(a, f, ph)| a * (2.0 * PI * f * t + ph).sin()).sum::<f64>() / norm;
            out.push((0.5 + 0.5 * z.tanh()) as f32);
        }
    }
    out
}

/// Meshes, position maps and latents for every video frame of one trial.
///
/// Convenient for small configs; the dataset builder rasterizes lazily
/// because full-resolution maps for a whole trial are large.
pub fn generate_face_sequence(cfg: &SynthConfig, trial: usize) -> Result<(Vec<TriMesh>, Vec<PositionMap>, Vec<Vec<f32>>)> {
    cfg.validate()?;
    let face = FaceModel::new(cfg)?;
    let raster = UvRaster::build(&face.template, cfg.map_resolution, cfg.map_resolution);
    let d = cfg.latent_dim;
    let all = latent_trajectory(cfg, trial);
    let latents: Vec<Vec<f32>> = all[cfg.lead_in_frames() * d..].chunks_exact(d).map(<[f32]>::to_vec).collect();
    let meshes: Vec<TriMesh> = latents.iter().map(|e| face.mesh(e)).collect();
    let maps = meshes.iter().map(|m| raster.apply(&m.vertices)).collect();
    Ok((meshes, maps, latents))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_vertices;

    fn small() -> SynthConfig {
        SynthConfig {
            trials: 2,
            segments_per_trial: 2,
            duration_per_segment: 0.5,
            map_resolution: 128,
            base_mesh: super::super::BaseMeshSpec { grid: 20, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn default_mesh_size_and_basis_orthogonality() {
        let face = FaceModel::new(&SynthConfig::default()).unwrap();
        assert_eq!(face.template.vertices.len(), 2500);
        face.template.validate().unwrap();
        let b = &face.basis;
        let col = |d: usize| (0..b.mean.len() * 3).map(move |i| b.components[i * b.dims + d] as f64);
        for i in 0..b.dims {
            for j in 0..b.dims {
                let dot: f64 = col(i).zip(col(j)).map(|(x, y)| x * y).sum();
                let ni: f64 = col(i).map(|x| x * x).sum::<f64>().sqrt();
                let nj: f64 = col(j).map(|x| x * x).sum::<f64>().sqrt();
                let cos = dot / (ni * nj);
                if i == j {
                    assert!((cos - 1.0).abs() < 1e-6);
                } else {
                    assert!(cos.abs() < 1e-5, "bases {i},{j}: cos {cos}");
                }
            }
        }
        // Every basis peaks at the configured amplitude.
        for d in 0..b.dims {
            let mut e = vec![0.0; b.dims];
            e[d] = 1.0;
            let peak = face.vertices(&e).iter().zip(&b.mean).map(|(p, m)| (0..3).map(|k| (p[k] - m[k]).powi(2)).sum::<f32>().sqrt()).fold(0.0, f32::max);
            assert!((peak - 0.12).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_latent_gives_base_mesh() {
        let face = FaceModel::new(&small()).unwrap();
        let zero = vec![0.0; 8];
        assert_eq!(face.vertices(&zero), face.template.vertices);
    }

    #[test]
    fn latents_are_bounded_smooth_and_seeded() {
        let cfg = SynthConfig::default();
        let e = latent_trajectory(&cfg, 0);
        let d = cfg.latent_dim;
        assert_eq!(e.len(), (cfg.lead_in_frames() + cfg.frames_per_trial()) * d);
        assert!(e.iter().all(|v| (0.0..=1.0).contains(v)));
        // |de/dt| ≤ ½·|dz/dt| ≤ ½·2π·f_hi·Σa/√(Σa²/2) ≤ ½·2π·f_hi·√(2K).
        let steps: Vec<f32> = e.chunks_exact(d).zip(e.chunks_exact(d).skip(1)).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()).collect();
        let bound = 0.5 * 2.0 * PI * cfg.latent_band[1] * (2.0 * LATENT_PARTIALS as f64).sqrt() / cfg.fps;
        let max_step = steps.iter().copied().fold(0.0, f32::max);
        assert!((max_step as f64) < bound, "latent jumps {max_step} per frame");
        let mean_step = steps.iter().sum::<f32>() / steps.len() as f32;
        assert!(mean_step < 0.05, "mean step {mean_step}");
        assert_eq!(e, latent_trajectory(&cfg, 0));
        assert_ne!(e, latent_trajectory(&cfg, 1));
        assert_ne!(e, latent_trajectory(&SynthConfig { seed: 1, ..cfg }, 0));
    }

    #[test]
    fn sequence_frames_differ_and_round_trip_through_maps() {
        let cfg = small();
        let (meshes, maps, latents) = generate_face_sequence(&cfg, 0).unwrap();
        assert_eq!(meshes.len(), cfg.frames_per_trial());
        assert_eq!(maps.len(), meshes.len());
        assert_eq!(latents.len(), meshes.len());
        let disp = meshes[0].vertices.iter().zip(&meshes[meshes.len() - 1].vertices).map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f32::max)).fold(0.0, f32::max);
        assert!(disp > 1e-3);
        // Interior vertices read back from their map.
        let side = cfg.base_mesh.grid + 1;
        for (mesh, map) in meshes.iter().zip(&maps).step_by(7) {
            let back = sample_vertices(map, mesh);
            let mut se = 0.0;
            let mut count = 0;
            for j in 1..side - 1 {
                for i in 1..side - 1 {
                    let v = j * side + i;
                    se += (0..3).map(|k| ((back.positions[v][k] - mesh.vertices[v][k]) as f64).powi(2)).sum::<f64>();
                    count += 1;
                }
            }
            let rms = (se / count as f64).sqrt();
            assert!(rms < 1e-3 * mesh.bbox_diagonal(), "round-trip rms {rms}");
        }
    }
}
