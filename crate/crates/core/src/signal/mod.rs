//! EEG preprocessing: band-pass filtering, z-scoring and frame-aligned windowing.

mod filter;
mod io;
mod norm;
mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{apply_filter, design_bandpass, Biquad, FilterDesign};
pub use io::{import_csv, load_eegb, read_eegb, save_eegb, write_eegb, EEGB_MAGIC, EEGB_VERSION};
pub use norm::{apply_zscore, fit_norm_stats, NormStats, NORM_EPSILON};
pub use window::{end_sample_index, segment_windows, Windowing};

/// Default acquisition rate of the headset.
pub const SAMPLE_RATE: f64 = 125.0;
/// Electrode count of the headset.
pub const CHANNELS: usize = 16;
/// Samples per decoder input window (3 s at 125 Hz).
pub const WINDOW: usize = 375;
pub const BAND_LOW: f64 = 4.0;
pub const BAND_HIGH: f64 = 40.0;
pub const FILTER_ORDER: usize = 6;

/// Continuous multichannel recording, samples stored row-major `[time × channel]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EegRecording {
    pub sample_rate: f64,
    pub channels: usize,
    pub samples: Vec<f32>,
    /// Time in seconds of the first sample on the shared capture clock.
    pub start_time: f64,
}

impl EegRecording {
    pub fn new(sample_rate: f64, channels: usize, samples: Vec<f32>, start_time: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Data(format!("sample rate must be positive, got {sample_rate}")));
        }
        if channels == 0 || !samples.len().is_multiple_of(channels) {
            return Err(Error::Data(format!(
                "{} samples do not split into {channels} channels",
                samples.len()
            )));
        }
        let rec = Self {
            sample_rate,
            channels,
            samples,
            start_time,
        };
        rec.check_finite()?;
        Ok(rec)
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len() / self.channels.max(1)
    }

    pub fn duration(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate
    }

    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.samples.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Sample value at time index `i` on channel `c`.
    pub fn at(&self, i: usize, c: usize) -> f32 {
        self.samples[i * self.channels + c]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.samples.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::Data(format!(
                "non-finite EEG value {} on channel {} at sample {}",
                self.samples[k],
                k % self.channels,
                k / self.channels
            ))),
        }
    }

    /// Sub-recording covering samples `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> Self {
        let to = to.min(self.num_samples());
        Self {
            sample_rate: self.sample_rate,
            channels: self.channels,
            samples: self.samples[from * self.channels..to * self.channels].to_vec(),
            start_time: self.start_time + from as f64 / self.sample_rate,
        }
    }
}

/// One decoder input: `window` consecutive samples ending at a video frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EegWindow {
    /// Row-major `[window × channel]`.
    pub data: Vec<f32>,
    pub window: usize,
    pub channels: usize,
    pub frame_index: usize,
    pub trial_id: String,
    pub subject_id: String,
}

/// Filter and window settings of the preprocessing chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub band_low: f64,
    pub band_high: f64,
    /// Order of the low-pass prototype before the band transform.
    pub filter_order: usize,
    /// Forward-backward filtering; `false` runs a single causal pass.
    pub zero_phase: bool,
    /// Samples per window, ending at the frame time.
    pub window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            band_low: BAND_LOW,
            band_high: BAND_HIGH,
            filter_order: FILTER_ORDER,
            zero_phase: true,
            window: WINDOW,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must hold at least one sample".into()));
        }
        if self.filter_order == 0 || !(self.band_low > 0.0 && self.band_high > self.band_low) {
            return Err(Error::Config(format!(
                "invalid band {}..{} Hz of order {}",
                self.band_low, self.band_high, self.filter_order
            )));
        }
        Ok(())
    }

    pub fn bandpass(&self, recording: &EegRecording) -> Result<EegRecording> {
        self.validate()?;
        let design = design_bandpass(recording.sample_rate, self.band_low, self.band_high, self.filter_order)?;
        apply_filter(recording, &design, self.zero_phase)
    }
}

/// Default 4–40 Hz zero-phase band-pass.
pub fn bandpass_default(recording: &EegRecording) -> Result<EegRecording> {
    PreprocessConfig::default().bandpass(recording)
}
