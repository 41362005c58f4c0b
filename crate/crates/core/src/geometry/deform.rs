use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::mesh::TriMesh;
use crate::error::{Error, Result};

pub const BASIS_DAMPING: f64 = 1e-6;
pub const DEFAULT_CONSTRAINT_WEIGHT: f64 = 1e3;

/// Linear shape model `mean + Σ_d β_d · component_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeBasis {
    pub mean: Vec<[f32; 3]>,
    /// Row-major `[V × 3 × D]`.
    pub components: Vec<f32>,
    pub dims: usize,
}

impl ShapeBasis {
    pub fn new(mean: Vec<[f32; 3]>, components: Vec<f32>, dims: usize) -> Result<Self> {
        if components.len() != mean.len() * 3 * dims {
            return Err(Error::dim(
                "shape basis",
                format!("{} vertices x 3 x {dims} needs {} values, got {}", mean.len(), mean.len() * 3 * dims, components.len()),
            ));
        }
        Ok(Self { mean, components, dims })
    }

    pub fn component(&self, vertex: usize, axis: usize, d: usize) -> f32 {
        self.components[(vertex * 3 + axis) * self.dims + d]
    }

    pub fn evaluate(&self, coeffs: &[f32]) -> Vec<[f32; 3]> {
        self.mean
            .iter()
            .enumerate()
            .map(|(v, m)| {
                let mut p = *m;
                for (axis, p) in p.iter_mut().enumerate() {
                    *p += (0..self.dims).map(|d| self.component(v, axis, d) * coeffs[d]).sum::<f32>();
                }
                p
            })
            .collect()
    }
}

/// Damped least-squares coefficients explaining the observed vertices.
pub fn fit_shape_basis(observed: &[(usize, [f32; 3])], basis: &ShapeBasis) -> Result<Vec<f32>> {
    let d = basis.dims;
    let rows = observed.len() * 3;
    if rows < d {
        return Err(Error::Rank {
            constraints: rows,
            unknowns: d,
        });
    }
    let mut a = DMatrix::<f64>::zeros(rows, d);
    let mut b = DVector::<f64>::zeros(rows);
    for (i, &(v, p)) in observed.iter().enumerate() {
        if v >= basis.mean.len() {
            return Err(Error::Data(format!("observed vertex {v} outside basis of {} vertices", basis.mean.len())));
        }
        for axis in 0..3 {
            let r = i * 3 + axis;
            b[r] = (p[axis] - basis.mean[v][axis]) as f64;
            for k in 0..d {
                a[(r, k)] = basis.component(v, axis, k) as f64;
            }
        }
    }
    let gram = a.transpose() * &a;
    let eig = gram.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if lo <= 1e-12 * hi.max(f64::MIN_POSITIVE) {
        let deficient = eig.eigenvalues.iter().filter(|&&e| e <= 1e-12 * hi).count();
        return Err(Error::Rank {
            constraints: d - deficient,
            unknowns: d,
        });
    }
    let lhs = gram + DMatrix::identity(d, d) * BASIS_DAMPING;
    let rhs = a.transpose() * b;
    let beta = lhs
        .cholesky()
        .ok_or_else(|| Error::Degenerate("normal equations are not positive definite".into()))?
        .solve(&rhs);
    Ok(beta.iter().map(|&x| x as f32).collect())
}

/// Settings for [`laplacian_deform`].
#[derive(Clone, Copy, Debug)]
pub struct DeformConfig {
    pub weight: f64,
    /// Relative residual at which CG stops, measured in the Jacobi-scaled
    /// norm `sqrt(rᵀD⁻¹r) / sqrt(bᵀD⁻¹b)` so heavily weighted constraint rows
    /// cannot mask the free vertices.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10 · V`.
    pub max_iterations: Option<usize>,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            weight: DEFAULT_CONSTRAINT_WEIGHT,
            tolerance: 1e-8,
            max_iterations: None,
        }
    }
}

/// Uniform graph Laplacian `(L x)_i = x_i - mean of neighbors`.
struct UniformLaplacian {
    adj: Vec<Vec<usize>>,
}

impl UniformLaplacian {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, n) in self.adj.iter().enumerate() {
            out[i] = if n.is_empty() {
                0.0
            } else {
                x[i] - n.iter().map(|&j| x[j]).sum::<f64>() / n.len() as f64
            };
        }
    }

    /// `Lᵀ y`, using the same neighbor lists.
    fn apply_t(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, n) in self.adj.iter().enumerate() {
            if n.is_empty() {
                continue;
            }
            out[i] += y[i];
            let w = y[i] / n.len() as f64;
            for &j in n {
                out[j] -= w;
            }
        }
    }

    /// Diagonal of `LᵀL`.
    fn normal_diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.adj.len()];
        for (i, n) in self.adj.iter().enumerate() {
            if n.is_empty() {
                continue;
            }
            d[i] += 1.0;
            let w = 1.0 / n.len() as f64;
            for &j in n {
                d[j] += w * w;
            }
        }
        d
    }
}

/// Soft-constrained Laplacian editing of the template.
///
/// Minimizes `‖L v − L v₀‖² + w² Σ_{i∈C} ‖v_i − c_i‖²` per coordinate with
/// Jacobi-preconditioned conjugate gradient on the normal equations, solving
/// for the displacement `v − v₀`.
pub fn laplacian_deform(template: &TriMesh, constraints: &BTreeMap<usize, [f32; 3]>, cfg: &DeformConfig) -> Result<TriMesh> {
    let nv = template.vertices.len();
    if constraints.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 constrained vertices, got {}", constraints.len())));
    }
    if let Some(&bad) = constraints.keys().find(|&&i| i >= nv) {
        return Err(Error::Data(format!("constraint on vertex {bad} of a {nv}-vertex mesh")));
    }
    let lap = UniformLaplacian { adj: template.adjacency() };
    let w2 = cfg.weight * cfg.weight;
    let mut sel = vec![0.0; nv];
    for &i in constraints.keys() {
        sel[i] = w2;
    }
    let diag: Vec<f64> = lap.normal_diagonal().iter().zip(&sel).map(|(a, b)| a + b).collect();
    let max_iter = cfg.max_iterations.unwrap_or(10 * nv);
    let mut out = template.vertices.clone();
    let mut tmp = vec![0.0; nv];
    let mut apply = |x: &[f64], y: &mut [f64]| {
        lap.apply(x, &mut tmp);
        lap.apply_t(&tmp, y);
        for i in 0..nv {
            y[i] += sel[i] * x[i];
        }
    };
    for axis in 0..3 {
        let mut b = vec![0.0; nv];
        for (&i, c) in constraints {
            b[i] = w2 * (c[axis] as f64 - template.vertices[i][axis] as f64);
        }
        let x = pcg(&mut apply, &b, &diag, cfg.tolerance, max_iter)?;
        for i in 0..nv {
            out[i][axis] = (template.vertices[i][axis] as f64 + x[i]) as f32;
        }
    }
    Ok(template.with_vertices(out))
}

fn pcg(apply: &mut impl FnMut(&[f64], &mut [f64]), b: &[f64], diag: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let precond = |r: &[f64]| -> Vec<f64> { r.iter().zip(diag).map(|(r, d)| if *d > 0.0 { r / d } else { *r }).collect() };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut rz = dot(&r, &z);
    let bnorm = rz.sqrt();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        if rz_new.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual: rz.sqrt() / bnorm,
    })
}
