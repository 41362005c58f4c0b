//! Synthetic paired EEG / face-geometry sequences with a known latent link.
//!
//! A low-dimensional latent trajectory drives both sides: it deforms a
//! half-ellipsoid face proxy through smooth vertex bases, and it amplitude
//! modulates one carrier per latent dimension that is mixed into the EEG
//! channels. Every quantity is a pure function of the config seed.

mod dataset;
mod eeg;
mod face;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MAP_RESOLUTION;
use crate::signal::{SAMPLE_RATE, WINDOW};

pub use dataset::{
    build_dataset, prepare_pairs, read_windows, write_windows, FramePairs, FrameRecord, Manifest, Prepared, SegmentRecord,
    SegmentRef, SplitRecord, SyntheticDataset, TrialData, TrialRecord, CONFIG_FILE, MANIFEST_FILE, MANIFEST_VERSION,
    TEMPLATE_FILE,
};
pub use eeg::{carrier_frequencies, generate_eeg, mixing_matrix, pink_noise};
pub use face::{generate_face_sequence, latent_trajectory, FaceModel};

/// Half-ellipsoid face proxy, facing +z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseMeshSpec {
    /// Semi-axes along x (width), y (height) and z (depth).
    pub radii: [f64; 3],
    /// Quads per side of the UV grid; `(grid + 1)²` vertices.
    pub grid: usize,
    /// Largest vertex displacement any single deformation basis produces.
    pub deformation_amplitude: f64,
}

impl Default for BaseMeshSpec {
    fn default() -> Self {
        Self {
            radii: [0.75, 1.0, 0.6],
            grid: 49,
            deformation_amplitude: 0.12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub latent_dim: usize,
    pub trials: usize,
    pub segments_per_trial: usize,
    pub fps: f64,
    /// Seconds of video per stimulus segment.
    pub duration_per_segment: f64,
    /// Signal-to-noise ratio of the injected pink noise; `null` disables noise.
    pub noise_snr_db: Option<f64>,
    /// Lowest and highest frequency (Hz) present in the latent trajectories.
    pub latent_band: [f64; 2],
    pub base_mesh: BaseMeshSpec,
    pub map_resolution: usize,
    pub channels: usize,
    pub sample_rate: f64,
    /// Generate one extra trial after the named ones and withhold it entirely
    /// for leave-one-trial-out evaluation.
    pub holdout_last_trial: bool,
    pub subject_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latent_dim: 8,
            trials: 5,
            segments_per_trial: 6,
            fps: 30.0,
            duration_per_segment: 2.0,
            noise_snr_db: Some(10.0),
            latent_band: [0.05, 0.5],
            base_mesh: BaseMeshSpec::default(),
            map_resolution: MAP_RESOLUTION,
            channels: crate::signal::CHANNELS,
            sample_rate: SAMPLE_RATE,
            holdout_last_trial: true,
            subject_id: "synthetic".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.trials == 0 || self.segments_per_trial == 0 {
            return bad("need at least one trial and one segment".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) || !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return bad(format!("fps {} and sample rate {} must be positive", self.fps, self.sample_rate));
        }
        if !(self.duration_per_segment > 0.0) || self.frames_per_segment() == 0 {
            return bad(format!("segment duration {}s holds no frames", self.duration_per_segment));
        }
        if self.noise_snr_db.is_some_and(|s| !s.is_finite()) {
            return bad("noise_snr_db must be finite (use null for no noise)".into());
        }
        let [lo, hi] = self.latent_band;
        if !(lo > 0.0 && hi > lo && hi < self.fps / 2.0) {
            return bad(format!("latent band {lo}..{hi} Hz must lie below the frame Nyquist {}", self.fps / 2.0));
        }
        let [f_lo, f_hi] = eeg::CARRIER_BAND;
        if self.sample_rate / 2.0 <= f_hi + hi || f_lo - hi <= 0.0 {
            return bad(format!("sample rate {} too low for carriers up to {f_hi} Hz", self.sample_rate));
        }
        if self.channels == 0 {
            return bad("need at least one EEG channel".into());
        }
        let m = &self.base_mesh;
        if m.grid < 2 || m.radii.iter().any(|r| !(*r > 0.0)) || !(m.deformation_amplitude >= 0.0) {
            return bad(format!("invalid base mesh {m:?}"));
        }
        if self.map_resolution < 8 {
            return bad(format!("map resolution {} below 8", self.map_resolution));
        }
        Ok(())
    }

    pub fn frames_per_segment(&self) -> usize {
        (self.duration_per_segment * self.fps).round() as usize
    }

    pub fn frames_per_trial(&self) -> usize {
        self.segments_per_trial * self.frames_per_segment()
    }

    /// Latent frames before the first video frame, so the first frame already
    /// has a full EEG window behind it.
    pub fn lead_in_frames(&self) -> usize {
        (WINDOW as f64 / self.sample_rate * self.fps).ceil() as usize
    }

    pub fn trial_id(&self, trial: usize) -> String {
        format!("trial_{trial}")
    }

    /// Named trials plus the holdout trial, if any.
    pub fn total_trials(&self) -> usize {
        self.trials + usize::from(self.holdout_last_trial)
    }

    pub fn holdout_trial(&self) -> Option<String> {
        self.holdout_last_trial.then(|| self.trial_id(self.trials))
    }
}

/// Independent random stream for one (trial, purpose) pair.
pub(crate) fn stream(seed: u64, trial: Option<usize>, purpose: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let t = trial.map_or(0, |t| t as u64 + 1);
    rng.set_stream((t << 8) | purpose);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = SynthConfig::default();
        c.validate().unwrap();
        assert_eq!(c.frames_per_segment(), 60);
        assert_eq!(c.lead_in_frames(), 90);
        let back: SynthConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(serde_json::from_str::<SynthConfig>("{}").unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        for c in [
            SynthConfig { latent_dim: 0, ..Default::default() },
            SynthConfig { fps: 0.0, ..Default::default() },
            SynthConfig { duration_per_segment: 0.001, ..Default::default() },
            SynthConfig { latent_band: [1.0, 0.5], ..Default::default() },
            SynthConfig { sample_rate: 50.0, ..Default::default() },
            SynthConfig { trials: 0, ..Default::default() },
        ] {
            assert!(c.validate().unwrap_err().is_config(), "{c:?}");
        }
    }

    /// Quadrature amplitude of every (channel, carrier) pair over the last
    /// third of a second of a preprocessed window, plus a bias feature.
    /// Carriers 3 Hz apart complete whole relative cycles over that span, so
    /// they barely leak into each other, and the short span keeps the lag
    /// behind the latent small.
    fn demodulated_features(w: &crate::signal::EegWindow, carriers: &[f64]) -> Vec<f64> {
        use std::f64::consts::PI;
        let span = (SAMPLE_RATE / 3.0).round() as usize;
        let start = w.window - span;
        let mut out = vec![1.0];
        for c in 0..w.channels {
            for &f in carriers {
                let (mut re, mut im) = (0.0, 0.0);
                for k in 0..span {
                    let x = w.data[(start + k) * w.channels + c] as f64;
                    let ph = 2.0 * PI * f * k as f64 / SAMPLE_RATE;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                out.push((re * re + im * im).sqrt() / span as f64);
            }
        }
        out
    }

    #[test]
    fn linear_probe_recovers_latents_from_filtered_eeg() {
        use crate::model::PairSource;
        use nalgebra::DMatrix;
        let cfg = SynthConfig::default();
        let ds = SyntheticDataset::generate(&cfg).unwrap();
        let pairs = ds.pairs().unwrap();
        let splits = pairs.splits().unwrap();
        let carriers = carrier_frequencies(cfg.latent_dim);
        let d = cfg.latent_dim;
        let latent = |i: usize| {
            let m = pairs.meta(i);
            let t: usize = m.trial_id.trim_start_matches("trial_").parse().unwrap();
            ds.trials[t].latents[m.frame_index * d..(m.frame_index + 1) * d].to_vec()
        };
        let design = |idx: &[usize]| {
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| demodulated_features(pairs.window(i), &carriers)).collect();
            DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c])
        };
        let fit_idx: Vec<usize> = splits.train.iter().chain(&splits.test).copied().collect();
        let x = design(&fit_idx);
        let y = DMatrix::from_fn(fit_idx.len(), d, |r, c| latent(fit_idx[r])[c] as f64);
        let w = x.clone().svd(true, true).solve(&y, 1e-10).unwrap();

        // Evaluate on the withheld trial.
        let xh = design(&splits.holdout);
        let yh = DMatrix::from_fn(splits.holdout.len(), d, |r, c| latent(splits.holdout[r])[c] as f64);
        let pred = &xh * &w;
        let mut r2 = Vec::new();
        for c in 0..d {
            let col = yh.column(c);
            let mean = col.mean();
            let ss_tot: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = col.iter().zip(pred.column(c).iter()).map(|(a, b)| (a - b).powi(2)).sum();
            r2.push(1.0 - ss_res / ss_tot);
        }
        let mean_r2 = r2.iter().sum::<f64>() / d as f64;
                assert!(mean_r2 > 0.5, "held-out R² {mean_r2:.3}, per latent {r2:.3?}");
    }
}
