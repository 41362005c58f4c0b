use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{stream, SynthConfig};
use crate::error::{Error, Result};
use crate::signal::EegRecording;

/// Carriers sit strictly inside the 4–40 Hz preprocessing passband.
pub(crate) const CARRIER_BAND: [f64; 2] = [6.0, 30.0];

const PURPOSE_MIXING: u64 = 2;
const PURPOSE_NOISE: u64 = 3;

/// Evenly spaced carrier per latent dimension, at bin centres of the carrier band.
pub fn carrier_frequencies(latent_dim: usize) -> Vec<f64> {
    let [lo, hi] = CARRIER_BAND;
    (0..latent_dim).map(|d| lo + (hi - lo) * (d as f64 + 0.5) / latent_dim as f64).collect()
}

/// Row-major `[channels × D]` mixing weights and one phase per carrier, shared by all trials.
pub fn mixing_matrix(cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream(cfg.seed, None, PURPOSE_MIXING);
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let m = (0..cfg.channels * cfg.latent_dim)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();
    let phases = (0..cfg.latent_dim).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (m, phases)
}

/// Unit-variance 1/f noise (Kellet's refined pinking filter over white noise).
pub fn pink_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let y = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            y
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n.max(1) as f64;
    let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    if std > 0.0 {
        out.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    out
}

/// EEG for one trial driven by `[frames × D]` latents sampled at the frame rate.
///
/// Latents are linearly upsampled to the EEG rate; channel `c` is
/// `Σ_d M[c,d]·e_d(t)·sin(2π f_d t + φ_d)` plus pink noise whose power is set
/// against the channel's power with every latent at 1, so zero latents still
/// yield noise and `noise_snr_db = None` yields none.
pub fn generate_eeg(latents: &[f32], cfg: &SynthConfig, trial: usize) -> Result<EegRecording> {
    let d = cfg.latent_dim;
    if latents.is_empty() || !latents.len().is_multiple_of(d) {
        return Err(Error::dim("generate_eeg", format!("{} latent values for dimension {d}", latents.len())));
    }
    let frames = latents.len() / d;
    let n = (frames as f64 / cfg.fps * cfg.sample_rate).round() as usize;
    let ch = cfg.channels;
    let (mix, phases) = mixing_matrix(cfg);
    let carriers = carrier_frequencies(d);
    let mut samples = vec![0.0f64; n * ch];
    for s in 0..n {
        let t = s as f64 / cfg.sample_rate;
        let pos = (t * cfg.fps).min((frames - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(frames - 1);
        let frac = pos - i0 as f64;
        let modulated: Vec<f64> = (0..d)
            .map(|k| {
                let e = (1.0 - frac) * latents[i0 * d + k] as f64 + frac * latents[i1 * d + k] as f64;
                e * (2.0 * PI * carriers[k] * t + phases[k]).sin()
            })
            .collect();
        for c in 0..ch {
            samples[s * ch + c] = (0..d).map(|k| mix[c * d + k] * modulated[k]).sum();
        }
    }
    if let Some(snr) = cfg.noise_snr_db {
        let mut rng = stream(cfg.seed, Some(trial), PURPOSE_NOISE);
        for c in 0..ch {
            let reference = 0.5 * (0..d).map(|k| mix[c * d + k].powi(2)).sum::<f64>();
            let std = (reference / 10f64.powf(snr / 10.0)).sqrt();
            for (s, v) in pink_noise(&mut rng, n).into_iter().enumerate() {
                samples[s * ch + c] += std * v;
            }
        }
    }
    EegRecording::new(cfg.sample_rate, ch, samples.into_iter().map(|v| v as f32).collect(), 0.0)
}
