use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::loss::splat_training_loss;
use super::render::{render_var, RenderOptions};
use super::types::{Camera, GaussianSplat, SplatLossWeights, RAW_WIDTH};
use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::TriMesh;

/// One training view: a posed mesh, the camera and the photo it produced.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub mesh: TriMesh,
    pub camera: Camera,
    pub image: Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplatOptimConfig {
    pub steps: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub loss: SplatLossWeights,
    pub render: RenderOptions,
}

impl Default for SplatOptimConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            optimizer: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            seed: 0,
            loss: SplatLossWeights::default(),
            render: RenderOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplatLossRecord {
    pub step: usize,
    pub view: usize,
    pub l1: f64,
    pub d_ssim: f64,
    pub total: f64,
}

/// One splat per face at the centroid, isotropic, grey.
pub fn init_splats(mesh: &TriMesh, scale: f32, opacity: f32) -> Vec<GaussianSplat> {
    (0..mesh.faces.len()).map(|f| GaussianSplat::flat(f, scale, opacity, [0.5; 3])).collect()
}

pub fn splats_to_tensor(splats: &[GaussianSplat]) -> Result<Tensor<f32>> {
    Tensor::new(&[splats.len(), RAW_WIDTH], splats.iter().flat_map(|s| s.to_raw().map(|v| v as f32)).collect())
}

pub fn splats_from_tensor(t: &Tensor<f32>, faces: &[usize]) -> Result<Vec<GaussianSplat>> {
    let raw = t.to_f64_vec();
    faces
        .iter()
        .enumerate()
        .map(|(i, &f)| GaussianSplat::from_raw(&raw[i * RAW_WIDTH..(i + 1) * RAW_WIDTH], f))
        .collect()
}

/// Adam over every splat parameter through the differentiable renderer,
/// drawing one view per step uniformly from a seeded stream.
pub fn optimize_splats(
    initial: &[GaussianSplat],
    views: &[Triplet],
    cfg: &SplatOptimConfig,
) -> Result<(Vec<GaussianSplat>, Vec<SplatLossRecord>)> {
    if views.is_empty() {
        return Err(Error::Data("splat optimization needs at least one view".into()));
    }
    cfg.loss.validate()?;
    for s in initial {
        s.validate()?;
    }
    let faces: Vec<usize> = initial.iter().map(|s| s.face).collect();
    let targets: Vec<Tensor<f32>> = views
        .iter()
        .map(|v| {
            if (v.image.height, v.image.width, v.image.channels) != (v.camera.height, v.camera.width, 3) {
                return Err(Error::dim("optimize_splats", "target image does not match the camera resolution"));
            }
            Ok(v.image.to_tensor())
        })
        .collect::<Result<_>>()?;
    let mut store = ParamStore::new();
    store.insert("splats", splats_to_tensor(initial)?);
    let mut adam = Adam::new(cfg.optimizer, &store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let view = rng.random_range(0..views.len());
        let v = &views[view];
        let mut tape = Tape::new();
        let vars = store.register(&mut tape);
        let raw = vars.get("splats");
        let (img, _) = render_var(&mut tape, raw, &faces, &v.mesh, &v.camera, &cfg.render)?;
        let parts = splat_training_loss(&mut tape, img, &targets[view], raw, &cfg.loss)?;
        let total = tape.value(parts.total).item() as f64;
        if !total.is_finite() {
            return Err(Error::Data(format!("non-finite splat loss at step {step}")));
        }
        tape.backward(parts.total)?;
        let grads = store.gradients(&tape, &vars)?;
        adam.step(&mut store, &grads)?;
        if step % 200 == 0 {
            info!("splat step {step}: L1 {:.4} D-SSIM {:.4}", parts.l1, parts.d_ssim);
        }
        history.push(SplatLossRecord { step, view, l1: parts.l1, d_ssim: parts.d_ssim, total });
    }
    let out = splats_from_tensor(store.get("splats").expect("inserted above"), &faces)?;
    Ok((out, history))
}
