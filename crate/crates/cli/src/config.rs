//! The single JSON document that configures every subcommand.

use std::path::{Path, PathBuf};

use mindmesh::model::{DecoderConfig, EncoderConfig, TrainConfig};
use mindmesh::signal::PreprocessConfig;
use mindmesh::splat::{Camera, RenderOptions, SplatLossWeights};
use mindmesh::synth::SynthConfig;
use mindmesh::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// File name of the config echo written into every output directory.
pub const CONFIG_ECHO: &str = "config.json";

/// Training steps of the default run: enough for a several-fold error drop on
/// the default dataset in a few minutes on one core.
pub const DEFAULT_TRAIN_STEPS: usize = 600;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization; the dataset and training loop carry their own seeds.
    pub seed: u64,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub splat: SplatSettings,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            train: TrainConfig {
                max_steps: Some(DEFAULT_TRAIN_STEPS),
                checkpoint_every: Some(DEFAULT_CHECKPOINT_EVERY),
                ..TrainConfig::default()
            },
            splat: SplatSettings::default(),
            paths: Paths::default(),
        }
    }
}

/// Splat initialization, loss weights and the render camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplatSettings {
    /// Isotropic scale of the default one-splat-per-face initialization, in face units.
    pub init_scale: f32,
    pub init_opacity: f32,
    pub loss: SplatLossWeights,
    pub render: RenderOptions,
    pub camera: CameraSettings,
}

impl Default for SplatSettings {
    fn default() -> Self {
        Self {
            init_scale: 0.7,
            init_opacity: 0.5,
            loss: SplatLossWeights::default(),
            render: RenderOptions::default(),
            camera: CameraSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSettings {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for CameraSettings {
    fn default() -> Self {
        Self {
            eye: [0.0, 0.0, 5.0],
            target: [0.0; 3],
            up: [0.0, 1.0, 0.0],
            fov_y: 0.6,
            height: 256,
            width: 256,
        }
    }
}

impl CameraSettings {
    pub fn camera(&self) -> Result<Camera> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::Config(format!("field of view {} rad outside (0, π)", self.fov_y)));
        }
        let proj = Camera::pinhole_fov(self.fov_y, self.height, self.width);
        let cam = Camera::look_at(
            Vector3::from(self.eye),
            Vector3::from(self.target),
            Vector3::from(self.up),
            proj,
            self.height,
            self.width,
        )?;
        cam.validate()?;
        Ok(cam)
    }
}

/// Default locations used when a subcommand's path flags are omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub run: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            run: "run".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.preprocess.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.train.validate()?;
        self.splat.loss.validate()?;
        if self.encoder.window != self.preprocess.window {
            return Err(Error::Config(format!(
                "encoder window {} differs from the preprocessing window {}",
                self.encoder.window, self.preprocess.window
            )));
        }
        if self.encoder.channels != self.synth.channels {
            return Err(Error::Config(format!(
                "encoder expects {} channels, the dataset has {}",
                self.encoder.channels, self.synth.channels
            )));
        }
        if self.decoder.output_size() != self.synth.map_resolution {
            return Err(Error::Config(format!(
                "decoder emits {0}x{0} maps, the dataset has {1}x{1}",
                self.decoder.output_size(),
                self.synth.map_resolution
            )));
        }
        if !(self.splat.init_scale > 0.0) || !(0.0..=1.0).contains(&self.splat.init_opacity) {
            return Err(Error::Config(format!(
                "splat init scale {} must be positive and opacity {} within [0, 1]",
                self.splat.init_scale, self.splat.init_opacity
            )));
        }
        self.splat.camera.camera()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Write the full config into `dir` for provenance.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(CONFIG_ECHO), self.to_json())?;
        Ok(())
    }
}
