use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::{c, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeluMode {
    #[default]
    Tanh,
    Erf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Gelu(GeluMode),
}

pub fn elu<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

fn elu_grad<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        x.exp()
    }
}

const GELU_K: f64 = 0.044_715;

pub fn gelu<T: Scalar>(x: T, mode: GeluMode) -> T {
    let half = c::<T>(0.5);
    match mode {
        GeluMode::Tanh => {
            let s = c::<T>((2.0 / std::f64::consts::PI).sqrt());
            half * x * (T::one() + (s * (x + c::<T>(GELU_K) * x * x * x)).tanh())
        }
        GeluMode::Erf => half * x * (T::one() + T::from_f64(libm::erf(x.as_f64() / std::f64::consts::SQRT_2))),
    }
}

fn gelu_grad<T: Scalar>(x: T, mode: GeluMode) -> T {
    let half = c::<T>(0.5);
    match mode {
        GeluMode::Tanh => {
            let s = c::<T>((2.0 / std::f64::consts::PI).sqrt());
            let k = c::<T>(GELU_K);
            let t = (s * (x + k * x * x * x)).tanh();
            half * (T::one() + t) + half * x * (T::one() - t * t) * s * (T::one() + c::<T>(3.0) * k * x * x)
        }
        GeluMode::Erf => {
            let xf = x.as_f64();
            let cdf = 0.5 * (1.0 + libm::erf(xf / std::f64::consts::SQRT_2));
            let pdf = (-0.5 * xf * xf).exp() / (2.0 * std::f64::consts::PI).sqrt();
            T::from_f64(cdf + xf * pdf)
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        match kind {
            Activation::Elu => self.elu(a),
            Activation::Gelu(mode) => self.gelu(a, mode),
        }
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(elu);
        self.record(
            &[a],
            out,
            Box::new(|ctx| vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| g * elu_grad(x)))]),
        )
    }

    pub fn gelu(&mut self, a: Var, mode: GeluMode) -> Var {
        let out = self.value(a).map(|x| gelu(x, mode));
        self.record(
            &[a],
            out,
            Box::new(move |ctx| vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| g * gelu_grad(x, mode)))]),
        )
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`; otherwise each
    /// element is zeroed with probability `p` and survivors scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - p));
        let mask = Tensor::from_fn(self.shape(a), |_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep_scale
            }
        });
        let out = self.value(a).zip_map(&mask, |x, m| x * m);
        Ok(self.record(
            &[a],
            out,
            Box::new(move |ctx| vec![Some(ctx.grad.zip_map(&mask, |g, m| g * m))]),
        ))
    }
}
