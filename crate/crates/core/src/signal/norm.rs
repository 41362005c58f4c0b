use serde::{Deserialize, Serialize};

use super::EegRecording;
use crate::error::{Error, Result};

pub const NORM_EPSILON: f32 = 1e-8;

/// Per-channel standardization statistics fitted on the training partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub epsilon: f32,
}

/// Mean and population standard deviation per channel over all segments.
pub fn fit_norm_stats(train: &[EegRecording]) -> Result<NormStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::Data("no training segments to fit normalization on".into()))?;
    let ch = first.channels;
    if let Some(bad) = train.iter().find(|r| r.channels != ch) {
        return Err(Error::Data(format!(
            "channel layout mismatch: {} vs {ch}",
            bad.channels
        )));
    }
    let n: usize = train.iter().map(EegRecording::num_samples).sum();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 samples per channel, got {n}")));
    }
    let mut sum = vec![0.0f64; ch];
    for r in train {
        for row in r.samples.chunks_exact(ch) {
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += v as f64;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0f64; ch];
    for r in train {
        for row in r.samples.chunks_exact(ch) {
            for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
    }
    Ok(NormStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        std: sq.iter().map(|s| (s / n as f64).sqrt() as f32).collect(),
        epsilon: NORM_EPSILON,
    })
}

/// `(x - mean) / (std + eps)` per channel.
pub fn apply_zscore(recording: &EegRecording, stats: &NormStats) -> Result<EegRecording> {
    let ch = recording.channels;
    if stats.mean.len() != ch || stats.std.len() != ch {
        return Err(Error::Data(format!(
            "stats cover {} channels, recording has {ch}",
            stats.mean.len()
        )));
    }
    let mut out = recording.clone();
    for row in out.samples.chunks_exact_mut(ch) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / (s + stats.epsilon);
        }
    }
    Ok(out)
}
