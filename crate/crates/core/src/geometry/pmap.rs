//! UV-space position maps.
//!
//! Texel `(row, col)` has its center at `u = (col + 0.5) / W`, `v = (row + 0.5) / H`.
//! Data is stored channel-last `[H × W × 3]`.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use super::mesh::TriMesh;
use crate::error::{Error, Result};

pub const PMAP_MAGIC: &[u8; 4] = b"PMAP";
pub const MAP_RESOLUTION: usize = 256;
/// Value held by texels outside the mask.
pub const SENTINEL: f32 = 0.0;
/// Fraction of masked texels with conflicting writes that triggers a warning.
pub const OVERLAP_WARN_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct PositionMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub mask: Vec<u8>,
}

impl PositionMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>, mask: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 || mask.len() != height * width {
            return Err(Error::dim(
                "position map",
                format!("{height}x{width} needs {} values and {} mask bytes", height * width * 3, height * width),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
            mask,
        })
    }

    pub fn texel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    /// Channel-first `[3 × H × W]` copy, the layout the decoder emits.
    pub fn to_planar(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c];
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, planar: &[f32], mask: Vec<u8>) -> Result<Self> {
        let n = height * width;
        if planar.len() != 3 * n {
            return Err(Error::dim("position map", format!("planar data has {} values, need {}", planar.len(), 3 * n)));
        }
        let mut data = vec![SENTINEL; 3 * n];
        for i in 0..n {
            if mask.get(i).copied().unwrap_or(0) != 0 {
                for c in 0..3 {
                    data[i * 3 + c] = planar[c * n + i];
                }
            }
        }
        Self::new(height, width, data, mask)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PMAP_MAGIC)?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
        w.write_all(&self.mask)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)
            .map_err(|_| Error::format("PMAP", "header truncated"))?;
        if &head[..4] != PMAP_MAGIC {
            return Err(Error::format("PMAP", format!("bad magic {:?}", &head[..4])));
        }
        let h = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut buf = vec![0u8; h * w * 12];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format("PMAP", "data truncated"))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut mask = vec![0u8; h * w];
        r.read_exact(&mut mask)
            .map_err(|_| Error::format("PMAP", "mask truncated"))?;
        Self::new(h, w, data, mask)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Per-texel face and barycentric weights for a fixed UV layout.
///
/// Building it is the expensive half of rasterization; applying it to a new
/// set of vertex positions is a cheap blend, so a sequence sharing one
/// topology rasterizes each frame with [`UvRaster::apply`].
#[derive(Clone, Debug)]
pub struct UvRaster {
    pub height: usize,
    pub width: usize,
    /// `(vertex indices, weights)` for each masked texel, `None` elsewhere.
    texels: Vec<Option<([u32; 3], [f32; 3])>>,
    /// Masked texels claimed by more than one face.
    pub overlaps: usize,
}

const INSIDE_TOL: f64 = 1e-9;
const STRICT_TOL: f64 = 1e-6;

impl UvRaster {
    pub fn build(mesh: &TriMesh, height: usize, width: usize) -> Self {
        let tris: Vec<([f64; 2], [f64; 2], [f64; 2])> = mesh
            .uv_faces
            .iter()
            .map(|t| {
                let p = |k: usize| {
                    let q = mesh.uv[t[k] as usize];
                    [q[0] as f64 * width as f64, q[1] as f64 * height as f64]
                };
                (p(0), p(1), p(2))
            })
            .collect();
        let rows: Vec<(Vec<Option<([u32; 3], [f32; 3])>>, usize)> = (0..height)
            .into_par_iter()
            .map(|row| {
                let y = row as f64 + 0.5;
                let mut out = vec![None; width];
                let mut overlaps = 0;
                for (f, &(a, b, c)) in tris.iter().enumerate() {
                    if y < a[1].min(b[1]).min(c[1]) || y > a[1].max(b[1]).max(c[1]) {
                        continue;
                    }
                    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                    if det.abs() < 1e-18 {
                        continue;
                    }
                    let lo = (a[0].min(b[0]).min(c[0]) - 0.5).floor().max(0.0) as usize;
                    let hi = ((a[0].max(b[0]).max(c[0]) - 0.5).ceil().max(0.0) as usize).min(width - 1);
                    for (col, slot) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
                        let x = col as f64 + 0.5;
                        let w1 = ((x - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (y - a[1])) / det;
                        let w2 = ((b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1])) / det;
                        let w0 = 1.0 - w1 - w2;
                        let min = w0.min(w1).min(w2);
                        if min < -INSIDE_TOL {
                            continue;
                        }
                        if slot.is_some() {
                            if min > STRICT_TOL {
                                overlaps += 1;
                            }
                            continue;
                        }
                        *slot = Some((mesh.faces[f], [w0 as f32, w1 as f32, w2 as f32]));
                    }
                }
                (out, overlaps)
            })
            .collect();
        let overlaps = rows.iter().map(|r| r.1).sum();
        let texels = rows.into_iter().flat_map(|r| r.0).collect();
        Self {
            height,
            width,
            texels,
            overlaps,
        }
    }

    pub fn mask(&self) -> Vec<u8> {
        self.texels.iter().map(|t| t.is_some() as u8).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.texels.iter().filter(|t| t.is_some()).count()
    }

    /// Position map for a vertex set sharing the layout this raster was built from.
    pub fn apply(&self, vertices: &[[f32; 3]]) -> PositionMap {
        let mut data = vec![SENTINEL; self.texels.len() * 3];
        for (px, t) in data.chunks_exact_mut(3).zip(&self.texels) {
            if let Some((idx, w)) = t {
                for c in 0..3 {
                    px[c] = (0..3).map(|k| w[k] * vertices[idx[k] as usize][c]).sum();
                }
            }
        }
        PositionMap {
            height: self.height,
            width: self.width,
            data,
            mask: self.mask(),
        }
    }
}

/// Rasterize mesh positions into UV space, first face in order wins conflicts.
pub fn rasterize_position_map(mesh: &TriMesh, resolution: usize) -> PositionMap {
    let raster = UvRaster::build(mesh, resolution, resolution);
    let masked = raster.masked_count();
    if masked > 0 && raster.overlaps as f64 > OVERLAP_WARN_FRACTION * masked as f64 {
        warn!(
            "UV overlap: {} of {masked} masked texels are covered by more than one face",
            raster.overlaps
        );
    }
    raster.apply(&mesh.vertices)
}

/// Vertex positions read back from a position map.
#[derive(Clone, Debug)]
pub struct SampledVertices {
    pub positions: Vec<[f32; 3]>,
    /// Vertices whose UV footprint has no masked texel; their template position was kept.
    pub exceptions: Vec<usize>,
}

/// Mask-weighted bilinear lookup at every template vertex's UV.
pub fn sample_vertices(pmap: &PositionMap, template: &TriMesh) -> SampledVertices {
    let (h, w) = (pmap.height, pmap.width);
    let uvs = template.vertex_uv();
    let mut positions = template.vertices.clone();
    let mut exceptions = Vec::new();
    for (i, uv) in uvs.iter().enumerate() {
        let Some(uv) = uv else {
            exceptions.push(i);
            continue;
        };
        let x = (uv[0] as f64 * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let y = (uv[1] as f64 * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let mut acc = [0.0f64; 3];
        let mut wsum = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (r, c) = ((y0 + dy).min(h - 1), (x0 + dx).min(w - 1));
                let wt = wx * wy;
                if wt == 0.0 || pmap.mask[r * w + c] == 0 {
                    continue;
                }
                let t = pmap.texel(r, c);
                for k in 0..3 {
                    acc[k] += wt * t[k] as f64;
                }
                wsum += wt;
            }
        }
        if wsum > 0.0 {
            positions[i] = acc.map(|a| (a / wsum) as f32);
        } else {
            exceptions.push(i);
        }
    }
    SampledVertices {
        positions,
        exceptions,
    }
}

/// 4-neighbor Laplacian of a channel-last `[H × W × C]` map.
///
/// Neighbors that are unmasked or off the image take the center value, so
/// only masked-to-masked differences contribute. Unmasked centers yield 0.
pub fn image_laplacian(map: &[f32], height: usize, width: usize, channels: usize, mask: &[u8]) -> Vec<f32> {
    let mut out = vec![0.0f32; map.len()];
    let on = |r: usize, c: usize| mask[r * width + c] != 0;
    for r in 0..height {
        for c in 0..width {
            if !on(r, c) {
                continue;
            }
            let mut nbrs = [None; 4];
            if r > 0 && on(r - 1, c) {
                nbrs[0] = Some((r - 1) * width + c);
            }
            if r + 1 < height && on(r + 1, c) {
                nbrs[1] = Some((r + 1) * width + c);
            }
            if c > 0 && on(r, c - 1) {
                nbrs[2] = Some(r * width + c - 1);
            }
            if c + 1 < width && on(r, c + 1) {
                nbrs[3] = Some(r * width + c + 1);
            }
            let center = r * width + c;
            for ch in 0..channels {
                let x = map[center * channels + ch];
                out[center * channels + ch] = nbrs.iter().flatten().map(|&n| map[n * channels + ch] - x).sum();
            }
        }
    }
    out
}
