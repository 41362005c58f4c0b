//! Batch and layer normalization.

use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of a batch-norm layer, updated in training mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Per-channel normalization of `input[B,C,H,W]` followed by `gamma`/`beta`.
    ///
    /// Training mode uses biased batch statistics and folds them into `state`
    /// (momentum 0.1, unbiased variance); eval mode uses `state` as is.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        training: bool,
    ) -> Result<Var> {
        let &[b, c, h, w] = self.shape(input) else {
            return Err(Error::dim(
                "batchnorm2d",
                format!("input must be [B,C,H,W], got {:?}", self.shape(input)),
            ));
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || state.running_mean.len() != c {
            return Err(Error::dim("batchnorm2d", format!("affine parameters must be [{c}]")));
        }
        let count = b * h * w;
        if training && count < 2 {
            return Err(Error::Contract(format!(
                "batchnorm2d: degenerate batch, B*H*W = {count} < 2 in training mode"
            )));
        }
        let plane = h * w;
        let x = self.value(input).data();
        let (mean, var): (Vec<T>, Vec<T>) = if training {
            let mut means = Vec::with_capacity(c);
            let mut vars = Vec::with_capacity(c);
            for ci in 0..c {
                let vals = (0..b).flat_map(|bi| x[(bi * c + ci) * plane..(bi * c + ci + 1) * plane].iter());
                let mean = vals.clone().copied().sum::<T>() / T::from_f64(count as f64);
                let var = vals.map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::from_f64(count as f64);
                state.running_mean[ci] =
                    (1.0 - BN_MOMENTUM) * state.running_mean[ci] + BN_MOMENTUM * mean.as_f64();
                let unbiased = var.as_f64() * count as f64 / (count - 1) as f64;
                state.running_var[ci] = (1.0 - BN_MOMENTUM) * state.running_var[ci] + BN_MOMENTUM * unbiased;
                means.push(mean);
                vars.push(var);
            }
            (means, vars)
        } else {
            (
                state.running_mean.iter().map(|&v| T::from_f64(v)).collect(),
                state.running_var.iter().map(|&v| T::from_f64(v)).collect(),
            )
        };
        let eps = T::from_f64(NORM_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let o = (bi * c + ci) * plane;
                for i in o..o + plane {
                    xhat[i] = (x[i] - mean[ci]) * inv_std[ci];
                    out[i] = gv[ci] * xhat[i] + bv[ci];
                }
            }
        }
        let shape = vec![b, c, h, w];
        let out = Tensor::from_parts(shape.clone(), out);
        Ok(self.record(
            &[input, gamma, beta],
            out,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let gamma = ctx.inputs[1].data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..b {
                    for ci in 0..c {
                        let o = (bi * c + ci) * plane;
                        for i in o..o + plane {
                            dgamma[ci] += g[i] * xhat[i];
                            dbeta[ci] += g[i];
                        }
                    }
                }
                let dx = ctx.needs[0].then(|| {
                    let mut d = vec![T::zero(); g.len()];
                    let n = T::from_f64(count as f64);
                    for bi in 0..b {
                        for ci in 0..c {
                            let o = (bi * c + ci) * plane;
                            let k = gamma[ci] * inv_std[ci];
                            for i in o..o + plane {
                                d[i] = if training {
                                    k * (g[i] - dbeta[ci] / n - xhat[i] * dgamma[ci] / n)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                    Tensor::from_parts(shape.clone(), d)
                });
                vec![
                    dx,
                    ctx.needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
                    ctx.needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
                ]
            }),
        ))
    }

    /// Normalization over the last axis with ε = 1e-5, then `gamma`/`beta`.
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let e = *shape.last().unwrap();
        if self.shape(gamma) != [e] || self.shape(beta) != [e] {
            return Err(Error::dim("layer_norm", format!("affine parameters must be [{e}]")));
        }
        let eps = T::from_f64(NORM_EPS);
        let ef = T::from_f64(e as f64);
        let x = self.value(input).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let rows = x.len() / e;
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); x.len()];
        for r in 0..rows {
            let xr = &x[r * e..(r + 1) * e];
            let mean = xr.iter().copied().sum::<T>() / ef;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / ef;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..e {
                let xh = (xr[j] - mean) * is;
                xhat[r * e + j] = xh;
                out[r * e + j] = gv[j] * xh + bv[j];
            }
        }
        let out = Tensor::from_parts(shape.clone(), out);
        Ok(self.record(
            &[input, gamma, beta],
            out,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let gamma = ctx.inputs[1].data();
                let mut dgamma = vec![T::zero(); e];
                let mut dbeta = vec![T::zero(); e];
                for r in 0..rows {
                    for j in 0..e {
                        dgamma[j] += g[r * e + j] * xhat[r * e + j];
                        dbeta[j] += g[r * e + j];
                    }
                }
                let dx = ctx.needs[0].then(|| {
                    let mut d = vec![T::zero(); g.len()];
                    for r in 0..rows {
                        let (mut s1, mut s2) = (T::zero(), T::zero());
                        for j in 0..e {
                            let gh = g[r * e + j] * gamma[j];
                            s1 += gh;
                            s2 += gh * xhat[r * e + j];
                        }
                        for j in 0..e {
                            let gh = g[r * e + j] * gamma[j];
                            d[r * e + j] = inv_std[r] * (gh - s1 / ef - xhat[r * e + j] * s2 / ef);
                        }
                    }
                    Tensor::from_parts(shape.clone(), d)
                });
                vec![
                    dx,
                    ctx.needs[1].then(|| Tensor::from_parts(vec![e], dgamma)),
                    ctx.needs[2].then(|| Tensor::from_parts(vec![e], dbeta)),
                ]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, GradCheckConfig};

    fn bn(x: Tensor<f64>, gamma: f64, beta: f64, training: bool) -> Tensor<f64> {
        let c = x.shape()[1];
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::full(&[c], gamma));
        let b = tape.constant(Tensor::full(&[c], beta));
        let mut state = BatchNormState::new(c);
        let y = tape.batchnorm2d(xv, g, b, &mut state, training).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn batchnorm_training_normalizes_each_channel() {
        let x = Tensor::<f64>::from_fn(&[3, 2, 2, 5], |i| (i as f64 * 1.3).sin() * 4.0 + i as f64 * 0.1);
        let y = bn(x, 1.0, 0.0, true);
        for ci in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| y.data()[(b * 2 + ci) * 10..(b * 2 + ci + 1) * 10].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / 30.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 30.0;
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-5, "mean {m} var {v}");
        }
    }

    #[test]
    fn batchnorm_constant_channel_yields_beta() {
        let y = bn(Tensor::full(&[2, 1, 2, 2], 3.7), 2.0, 0.25, true);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn batchnorm_two_element_channel() {
        let y = bn(Tensor::from_f64(&[1, 1, 1, 2], &[0.0, 2.0]).unwrap(), 3.0, 0.5, true);
        let k = 1.0 / (1.0 + NORM_EPS).sqrt();
        assert!((y.data()[0] - (-k * 3.0 + 0.5)).abs() < 1e-12);
        assert!((y.data()[1] - (k * 3.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_degenerate_batch_rejected_in_training_only() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let mut st = BatchNormState::new(2);
        assert!(matches!(
            tape.batchnorm2d(x, g, b, &mut st, true),
            Err(Error::Contract(_))
        ));
        assert!(tape.batchnorm2d(x, g, b, &mut st, false).is_ok());
    }

    #[test]
    fn batchnorm_updates_running_stats_with_momentum() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 1, 1, 2], &[0.0, 2.0]).unwrap());
        let g = tape.constant(Tensor::ones(&[1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let mut st = BatchNormState::new(1);
        tape.batchnorm2d(x, g, b, &mut st, true).unwrap();
        assert!((st.running_mean[0] - 0.1).abs() < 1e-12);
        // unbiased variance of {0,2} is 2
        assert!((st.running_var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_gradients_both_modes() {
        for training in [true, false] {
            let x = Tensor::<f64>::from_fn(&[2, 3, 2, 3], |i| (i as f64 * 0.77).sin() + 0.1 * i as f64);
            let g = Tensor::<f64>::from_f64(&[3], &[1.2, -0.7, 0.4]).unwrap();
            let b = Tensor::<f64>::from_f64(&[3], &[0.1, 0.2, -0.3]).unwrap();
            let report = check_gradients(
                &[x, g, b],
                |tape, v| {
                    let mut st = BatchNormState {
                        running_mean: vec![0.3, -0.1, 0.2],
                        running_var: vec![1.5, 0.8, 2.0],
                    };
                    let y = tape.batchnorm2d(v[0], v[1], v[2], &mut st, training).unwrap();
                    let w = tape.constant(Tensor::from_fn(&[2, 3, 2, 3], |i| (i as f64 * 0.31).cos()));
                    let p = tape.mul(y, w);
                    let s = tape.square(p);
                    tape.sum(s)
                },
                &GradCheckConfig::default(),
            );
            assert!(report.passed, "training={training}: {report}");
        }
    }

    #[test]
    fn layer_norm_closed_forms() {
        let mut tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::from_f64(&[2], &[2.0, 3.0]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[2], &[0.5, -0.5]).unwrap());
        let x = tape.constant(Tensor::from_f64(&[2, 2], &[-4.0, 4.0, 7.0, 7.0]).unwrap());
        let y = tape.layer_norm(x, g, b).unwrap();
        let v = tape.value(y).to_f64_vec();
        let k = 4.0 / (16.0 + NORM_EPS).sqrt();
        assert!((v[0] - (-k * 2.0 + 0.5)).abs() < 1e-12);
        assert!((v[1] - (k * 3.0 - 0.5)).abs() < 1e-12);
        // constant row -> beta
        assert!((v[2] - 0.5).abs() < 1e-12 && (v[3] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_unit_moments_and_gradients() {
        let mut tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::ones(&[6]));
        let b = tape.constant(Tensor::zeros(&[6]));
        let x = tape.constant(Tensor::from_fn(&[3, 6], |i| (i as f64 * 2.1).sin() * 5.0));
        let y = tape.layer_norm(x, g, b).unwrap();
        for row in tape.value(y).data().chunks(6) {
            let m = row.iter().sum::<f64>() / 6.0;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-5);
        }
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i as f64 * 0.5).cos());
        let gg = Tensor::<f64>::from_fn(&[4], |i| 0.5 + i as f64 * 0.3);
        let bb = Tensor::<f64>::from_fn(&[4], |i| i as f64 * -0.2);
        let report = check_gradients(
            &[x, gg, bb],
            |tape, v| {
                let y = tape.layer_norm(v[0], v[1], v[2]).unwrap();
                let w = tape.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin()));
                let p = tape.mul(y, w);
                let s = tape.square(p);
                tape.sum(s)
            },
            &GradCheckConfig::default(),
        );
        assert!(report.passed, "{report}");
    }
}
