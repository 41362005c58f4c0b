//! Gradient verification of the shrunk end-to-end network and of every layer.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{DecoderConfig, EncoderConfig, LossWeights};
use super::loss::position_map_loss;
use super::net::Model;
use crate::autodiff::{check_gradients_named, layer_gradient_suite, GradCheckConfig, GradCheckReport, Tensor};
use crate::error::Result;

/// Gradients below this magnitude are compared absolutely in the model check.
///
/// Stem convolution biases feed batch norm and the attention key bias feeds a
/// softmax, so their exact gradient is zero and the finite difference is pure
/// round-off of the loss (observed up to 2e-9). With a 1e-4 tolerance this
/// floor still flags any absolute error above 1e-8.
pub const MODEL_GRAD_FLOOR: f64 = 1e-4;

/// Central differences through the tiny network and its position-map loss,
/// over every parameter and the input batch.
pub fn model_gradient_check(seed: u64, positional: bool, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let enc = EncoderConfig { positional, ..EncoderConfig::tiny() };
    let dec = DecoderConfig::tiny();
    let size = dec.output_size();
    let mut model = Model::init(enc, dec, seed)?.cast::<f64>();
    if positional {
        // Zero-initialized embeddings would leave their gradient trivially tested.
        if let Some(t) = model.params.get_mut("enc.pos") {
            *t = t.map(|_| 0.1);
        }
    }
    let batch = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    let x = Tensor::from_fn(&[batch, 1, model.encoder.channels, model.encoder.window], |_| {
        rng.random_range(-1.0..1.0)
    });
    let target = Tensor::from_fn(&[batch, 3, size, size], |_| rng.random_range(-1.0..1.0));
    let mask: Vec<u8> = (0..batch * size * size).map(|_| u8::from(rng.random::<f64>() < 0.8)).collect();

    let mut named: Vec<(String, Tensor<f64>)> = model.params.iter().map(|(n, t)| (n.to_owned(), t.clone())).collect();
    named.push(("input".into(), x));
    let store = model.params.clone();
    let weights = LossWeights::default();
    let report = check_gradients_named(
        &named,
        |tape, vars| {
            let (params, x) = vars.split_at(vars.len() - 1);
            let pv = store.bind(params);
            let mut m = model.clone();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
            let y = m.forward(tape, &pv, x[0], true, &mut drop_rng).expect("tiny model forward");
            position_map_loss(tape, y, &target, &mask, &weights).expect("tiny model loss").total
        },
        &GradCheckConfig {
            seed,
            max_coords: cfg.max_coords.or(Some(12)),
            floor: cfg.floor.max(MODEL_GRAD_FLOOR),
            ..cfg.clone()
        },
    );
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Every layer case and the end-to-end model, each over a range of seeds.
#[derive(Clone, Debug, Serialize)]
pub struct GradientSuite {
    pub entries: Vec<SuiteEntry>,
}

impl GradientSuite {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.report.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.report.max_rel_error).fold(0.0, f64::max)
    }

    /// Worst relative error per case name, in first-seen order.
    pub fn summary(&self) -> Vec<(String, f64, bool)> {
        let mut out: Vec<(String, f64, bool)> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|(n, _, _)| *n == e.name) {
                Some(row) => {
                    row.1 = row.1.max(e.report.max_rel_error);
                    row.2 &= e.report.passed;
                }
                None => out.push((e.name.clone(), e.report.max_rel_error, e.report.passed)),
            }
        }
        out
    }
}

/// Layer cases plus the model check for each seed; the model alternates
/// between learned positional embeddings off and on.
pub fn gradient_suite(seeds: Range<u64>, cfg: &GradCheckConfig) -> Result<GradientSuite> {
    let mut entries = Vec::new();
    for seed in seeds {
        for (name, report) in layer_gradient_suite(seed, cfg) {
            entries.push(SuiteEntry { name: name.into(), seed, report });
        }
        let positional = seed % 2 == 1;
        let report = model_gradient_check(seed, positional, cfg)?;
        let name = if positional { "model_positional" } else { "model" };
        entries.push(SuiteEntry { name: name.into(), seed, report });
    }
    Ok(GradientSuite { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrunk_model_gradients_match_finite_differences() {
        for seed in 0..20 {
            let r = model_gradient_check(seed, seed % 3 == 0, &GradCheckConfig::default()).unwrap();
            assert!(r.passed, "seed {seed}: {r}");
        }
    }

    #[test]
    fn suite_summary_groups_by_case() {
        let s = gradient_suite(0..2, &GradCheckConfig::default()).unwrap();
        assert!(s.passed());
        let names: Vec<String> = s.summary().into_iter().map(|r| r.0).collect();
        assert!(names.contains(&"model".to_string()) && names.contains(&"model_positional".to_string()));
        assert!(names.contains(&"attention".to_string()));
        assert!(s.max_rel_error() <= 1e-4);
    }
}
