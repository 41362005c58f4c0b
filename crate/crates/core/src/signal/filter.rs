//! Butterworth band-pass design as cascaded biquads, and (zero-phase) filtering.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::EegRecording;
use crate::error::{Error, Result};

/// One biquad `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Moduli of the two poles (roots of `z² + a1 z + a2`).
    pub fn pole_moduli(&self) -> [f64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let r1 = (-self.a1 + disc) / 2.0;
        let r2 = (-self.a1 - disc) / 2.0;
        [r1.norm(), r2.norm()]
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDesign {
    pub sample_rate: f64,
    pub prototype_order: usize,
    pub band_low: f64,
    pub band_high: f64,
    pub sections: Vec<Biquad>,
}

impl FilterDesign {
    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / self.sample_rate);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude_db(&self, freq: f64) -> f64 {
        20.0 * self.response(freq).norm().log10()
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.pole_moduli().iter().all(|&m| m < 1.0))
    }

    /// Run the cascade over `x` in place, starting from rest.
    pub fn filter_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            // transposed direct form II
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b0 * input + z1;
                z1 = s.b1 * input - s.a1 * y + z2;
                z2 = s.b2 * input - s.a2 * y;
                *v = y;
            }
        }
    }

    /// Forward then time-reversed pass: squared magnitude, zero phase.
    pub fn filtfilt_in_place(&self, x: &mut [f64]) {
        self.filter_in_place(x);
        x.reverse();
        self.filter_in_place(x);
        x.reverse();
    }
}

/// Butterworth band-pass: an analog low-pass prototype of `prototype_order`
/// poles, band-transformed (doubling the pole count) and mapped to the z-plane
/// by the bilinear transform with pre-warped band edges.
pub fn design_bandpass(sample_rate: f64, low: f64, high: f64, prototype_order: usize) -> Result<FilterDesign> {
    let nyquist = sample_rate / 2.0;
    if !(sample_rate > 0.0 && low > 0.0 && low < high && high < nyquist) {
        return Err(Error::Config(format!(
            "band-pass edges must satisfy 0 < low < high < fs/2; got low={low}, high={high}, fs={sample_rate}"
        )));
    }
    if prototype_order == 0 {
        return Err(Error::Config("filter order must be >= 1".into()));
    }
    let n = prototype_order;
    let fs2 = 2.0 * sample_rate;
    let warp = |f: f64| fs2 * (PI * f / sample_rate).tan();
    let (wl, wh) = (warp(low), warp(high));
    let bw = wh - wl;
    let w0_sq = wl * wh;

    // Analog prototype poles on the left half of the unit circle.
    let proto: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64))
        .collect();
    // Low-pass to band-pass: each pole p splits into p·bw/2 ± sqrt((p·bw/2)² − w0²).
    let mut analog = Vec::with_capacity(2 * n);
    for p in &proto {
        let half = p * (bw / 2.0);
        let root = (half * half - w0_sq).sqrt();
        analog.push(half + root);
        analog.push(half - root);
    }
    // n zeros at s = 0 and n at infinity; bilinear maps them to z = 1 and z = -1.
    let digital: Vec<Complex64> = analog.iter().map(|&p| (fs2 + p) / (fs2 - p)).collect();
    let gain_analog = bw.powi(n as i32);
    let num: Complex64 = Complex64::new(fs2, 0.0).powu(n as u32);
    let den: Complex64 = analog.iter().map(|&p| fs2 - p).product();
    let gain = gain_analog * (num / den).re;

    let sections = pair_poles(&digital)
        .into_iter()
        .enumerate()
        .map(|(i, (a1, a2))| {
            let k = if i == 0 { gain } else { 1.0 };
            Biquad {
                b0: k,
                b1: 0.0,
                b2: -k,
                a1,
                a2,
            }
        })
        .collect();
    Ok(FilterDesign {
        sample_rate,
        prototype_order: n,
        band_low: low,
        band_high: high,
        sections,
    })
}

/// Group poles into second-order denominators `(a1, a2)`: conjugate pairs
/// first, then leftover real poles two at a time.
fn pair_poles(poles: &[Complex64]) -> Vec<(f64, f64)> {
    const IMAG_TOL: f64 = 1e-10;
    let mut out = Vec::new();
    let mut real = Vec::new();
    for p in poles {
        if p.im > IMAG_TOL {
            out.push((-2.0 * p.re, p.norm_sqr()));
        } else if p.im.abs() <= IMAG_TOL {
            real.push(p.re);
        }
    }
    real.sort_by(|a, b| a.total_cmp(b));
    for pair in real.chunks(2) {
        match *pair {
            [r1, r2] => out.push((-(r1 + r2), r1 * r2)),
            [r] => out.push((-r, 0.0)),
            _ => unreachable!(),
        }
    }
    out
}

/// Filter every channel independently.
pub fn apply_filter(recording: &EegRecording, design: &FilterDesign, zero_phase: bool) -> Result<EegRecording> {
    recording.check_finite()?;
    let (t, ch) = (recording.num_samples(), recording.channels);
    let mut out = vec![0.0f32; t * ch];
    let mut buf = vec![0.0f64; t];
    for c in 0..ch {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = recording.samples[i * ch + c] as f64;
        }
        if zero_phase {
            design.filtfilt_in_place(&mut buf);
        } else {
            design.filter_in_place(&mut buf);
        }
        for (i, &b) in buf.iter().enumerate() {
            out[i * ch + c] = b as f32;
        }
    }
    Ok(EegRecording {
        samples: out,
        ..recording.clone()
    })
}
