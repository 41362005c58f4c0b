use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest face area accepted as non-degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Triangle mesh with a separate UV layout. Topology is shared across a
/// sequence; only `vertices` change from frame to frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<[f32; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub uv: Vec<[f32; 2]>,
    pub uv_faces: Vec<[u32; 3]>,
}

pub(crate) fn to64(p: [f32; 3]) -> [f64; 3] {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriMesh {
    /// Validate index ranges and face areas.
    pub fn new(vertices: Vec<[f32; 3]>, faces: Vec<[u32; 3]>, uv: Vec<[f32; 2]>, uv_faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            uv,
            uv_faces,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces.len() != self.uv_faces.len() {
            return Err(Error::Data(format!(
                "{} faces but {} uv faces",
                self.faces.len(),
                self.uv_faces.len()
            )));
        }
        let nv = self.vertices.len() as u32;
        let nt = self.uv.len() as u32;
        for (f, (tri, uvt)) in self.faces.iter().zip(&self.uv_faces).enumerate() {
            if tri.iter().any(|&i| i >= nv) || uvt.iter().any(|&i| i >= nt) {
                return Err(Error::Data(format!("face {f} has an out-of-range index")));
            }
            let area = self.face_area(f);
            if !(area > MIN_FACE_AREA) {
                return Err(Error::Degenerate(format!("face {f} has area {area:e}")));
            }
        }
        if let Some(i) = self.vertices.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Data(format!("vertex {i} is not finite")));
        }
        Ok(())
    }

    /// Regular grid over a UV rectangle, lifted to 3D by `surface(u, v)`.
    ///
    /// `n` quads per side, two triangles each; UV and vertex indices coincide.
    pub fn uv_grid(n: usize, uv_lo: [f64; 2], uv_hi: [f64; 2], surface: impl Fn(f64, f64) -> [f64; 3]) -> Self {
        let side = n + 1;
        let mut vertices = Vec::with_capacity(side * side);
        let mut uv = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                let u = uv_lo[0] + (uv_hi[0] - uv_lo[0]) * i as f64 / n as f64;
                let v = uv_lo[1] + (uv_hi[1] - uv_lo[1]) * j as f64 / n as f64;
                let p = surface(u, v);
                vertices.push([p[0] as f32, p[1] as f32, p[2] as f32]);
                uv.push([u as f32, v as f32]);
            }
        }
        let mut faces = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let a = (j * side + i) as u32;
                let b = a + 1;
                let c = a + side as u32;
                let d = c + 1;
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        Self {
            vertices,
            uv_faces: faces.clone(),
            faces,
            uv,
        }
    }

    /// A triangle split into `n²` congruent sub-triangles; UV is barycentric.
    pub fn subdivided_triangle(corners: [[f64; 3]; 3], n: usize) -> Self {
        let mut index = std::collections::HashMap::new();
        let mut vertices = Vec::new();
        let mut uv = Vec::new();
        for i in 0..=n {
            for j in 0..=n - i {
                let (a, b) = (i as f64 / n as f64, j as f64 / n as f64);
                let p: [f64; 3] = std::array::from_fn(|k| corners[0][k] + a * (corners[1][k] - corners[0][k]) + b * (corners[2][k] - corners[0][k]));
                index.insert((i, j), vertices.len() as u32);
                vertices.push(p.map(|v| v as f32));
                uv.push([a as f32, b as f32]);
            }
        }
        let mut faces = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n - i {
                faces.push([index[&(i, j)], index[&(i + 1, j)], index[&(i, j + 1)]]);
                if j + 1 < n - i {
                    faces.push([index[&(i + 1, j)], index[&(i + 1, j + 1)], index[&(i, j + 1)]]);
                }
            }
        }
        Self {
            vertices,
            uv_faces: faces.clone(),
            faces,
            uv,
        }
    }

    pub fn face_points(&self, f: usize) -> [[f64; 3]; 3] {
        let t = self.faces[f];
        [0, 1, 2].map(|k| to64(self.vertices[t[k] as usize]))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_points(f);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    /// UV coordinate of each vertex, taken from the first face corner that references it.
    pub fn vertex_uv(&self) -> Vec<Option<[f32; 2]>> {
        let mut out = vec![None; self.vertices.len()];
        for (tri, uvt) in self.faces.iter().zip(&self.uv_faces) {
            for k in 0..3 {
                out[tri[k] as usize].get_or_insert(self.uv[uvt[k] as usize]);
            }
        }
        out
    }

    /// Each vertex's distinct neighbors along face edges, sorted.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for t in &self.faces {
            for k in 0..3 {
                let (a, b) = (t[k] as usize, t[(k + 1) % 3] as usize);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for n in &mut adj {
            n.sort_unstable();
            n.dedup();
        }
        adj
    }

    pub fn with_vertices(&self, vertices: Vec<[f32; 3]>) -> Self {
        Self {
            vertices,
            ..self.clone()
        }
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k] as f64);
                hi[k] = hi[k].max(p[k] as f64);
            }
        }
        norm(sub(hi, lo))
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.uv {
            let _ = writeln!(s, "vt {} {}", t[0], t[1]);
        }
        for (f, t) in self.faces.iter().zip(&self.uv_faces) {
            let _ = writeln!(
                s,
                "f {}/{} {}/{} {}/{}",
                f[0] + 1,
                t[0] + 1,
                f[1] + 1,
                t[1] + 1,
                f[2] + 1,
                t[2] + 1
            );
        }
        s
    }

    /// Parse `v`, `vt` and `f a/b` records; other records are ignored.
    pub fn from_obj<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::format("OBJ", format!("line {line}: {what}"));
        let mut vertices = Vec::new();
        let mut uv = Vec::new();
        let mut faces = Vec::new();
        let mut uv_faces = Vec::new();
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let mut it = line.split_whitespace();
            let nums = |it: std::str::SplitWhitespace<'_>| -> Option<Vec<f32>> { it.map(|s| s.parse().ok()).collect() };
            match it.next() {
                Some("v") => match nums(it).as_deref() {
                    Some([x, y, z, ..]) => vertices.push([*x, *y, *z]),
                    _ => return Err(bad(ln + 1, "vertex needs 3 coordinates")),
                },
                Some("vt") => match nums(it).as_deref() {
                    Some([u, v, ..]) => uv.push([*u, *v]),
                    _ => return Err(bad(ln + 1, "texture vertex needs 2 coordinates")),
                },
                Some("f") => {
                    let corners: Vec<&str> = it.collect();
                    if corners.len() != 3 {
                        return Err(bad(ln + 1, "only triangles are supported"));
                    }
                    let mut tri = [0u32; 3];
                    let mut tt = [0u32; 3];
                    for (k, c) in corners.iter().enumerate() {
                        let mut parts = c.split('/');
                        let idx = |s: Option<&str>| s.and_then(|s| s.parse::<u32>().ok()).filter(|&i| i > 0);
                        tri[k] = idx(parts.next()).ok_or_else(|| bad(ln + 1, "bad vertex index"))? - 1;
                        tt[k] = match idx(parts.next()) {
                            Some(i) => i - 1,
                            None => tri[k],
                        };
                    }
                    faces.push(tri);
                    uv_faces.push(tt);
                }
                _ => {}
            }
        }
        Self::new(vertices, faces, uv, uv_faces)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_obj().as_bytes())?;
        Ok(())
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        Self::from_obj(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
