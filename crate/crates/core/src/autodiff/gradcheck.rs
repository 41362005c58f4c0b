//! Central finite-difference verification of tape gradients (f64 only).

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Denominator floor so that near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamReport {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck {} (max rel err {:.3e}, tol {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.tol
        )?;
        for p in &self.params {
            writeln!(
                f,
                "  {:<28} {:>6} coords  max rel err {:.3e}  (analytic {:.6e}, numeric {:.6e})",
                p.name, p.coords_checked, p.max_rel_error, p.worst_analytic, p.worst_numeric
            )?;
        }
        Ok(())
    }
}

impl GradCheckReport {
    pub fn merge(reports: impl IntoIterator<Item = GradCheckReport>) -> GradCheckReport {
        let mut params = Vec::new();
        let mut tol = 0.0_f64;
        let mut passed = true;
        for r in reports {
            tol = tol.max(r.tol);
            passed &= r.passed;
            params.extend(r.params);
        }
        let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
        GradCheckReport {
            params,
            max_rel_error,
            tol,
            passed,
        }
    }
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare analytic gradients of a scalar function against central differences.
///
/// `build` records the function on a fresh tape given one leaf per input and
/// returns the scalar output; it must be deterministic.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], build: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let named: Vec<(String, Tensor<f64>)> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("input{i}"), t.clone()))
        .collect();
    check_gradients_named(&named, build, cfg)
}

pub fn check_gradients_named<F>(
    inputs: &[(String, Tensor<f64>)],
    build: F,
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).expect("gradcheck function must return a scalar");
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient").clone())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut params = Vec::with_capacity(inputs.len());
    for (k, (name, original)) in inputs.iter().enumerate() {
        let n = original.len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut report = ParamReport {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &i in &coords {
            let x0 = original.data()[i];
            values[k].data_mut()[i] = x0 + cfg.step;
            let fp = eval(&values);
            values[k].data_mut()[i] = x0 - cfg.step;
            let fm = eval(&values);
            values[k].data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic[k].data()[i];
            let err = relative_error(a, numeric, cfg.floor);
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
        params.push(report);
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        params,
        max_rel_error,
        tol: cfg.tol,
        passed: max_rel_error <= cfg.tol,
    }
}
