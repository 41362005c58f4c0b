//! Pointwise arithmetic, reductions and reshapes.

use crate::autodiff::tape::{BackwardCtx, Tape, Var};
use crate::autodiff::tensor::{Scalar, Tensor};

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &str, a: Var, b: Var) {
    assert_eq!(
        tape.shape(a),
        tape.shape(b),
        "{op}: operand shapes differ"
    );
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "add", a, b);
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.record(
            &[a, b],
            out,
            Box::new(|ctx: &BackwardCtx<'_, T>| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "sub", a, b);
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.record(
            &[a, b],
            out,
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "mul", a, b);
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.record(
            &[a, b],
            out,
            Box::new(|ctx| {
                let (x, y) = (ctx.inputs[0], ctx.inputs[1]);
                vec![
                    ctx.needs[0].then(|| ctx.grad.zip_map(y, |g, y| g * y)),
                    ctx.needs[1].then(|| ctx.grad.zip_map(x, |g, x| g * x)),
                ]
            }),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, "div", a, b);
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.record(
            &[a, b],
            out,
            Box::new(|ctx| {
                let (y, q) = (ctx.inputs[1], ctx.output);
                vec![
                    ctx.needs[0].then(|| ctx.grad.zip_map(y, |g, y| g / y)),
                    ctx.needs[1].then(|| {
                        let gq = ctx.grad.zip_map(q, |g, q| g * q);
                        gq.zip_map(y, |gq, y| -gq / y)
                    }),
                ]
            }),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let k = T::from_f64(factor);
        let out = self.value(a).map(|x| x * k);
        self.record(&[a], out, Box::new(move |ctx| vec![Some(ctx.grad.map(|g| g * k))]))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let k = T::from_f64(offset);
        let out = self.value(a).map(|x| x + k);
        self.record(&[a], out, Box::new(|ctx| vec![Some(ctx.grad.clone())]))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.record(
            &[a],
            out,
            Box::new(|ctx| {
                let two = T::one() + T::one();
                vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| two * g * x))]
            }),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        self.record(
            &[a],
            out,
            Box::new(|ctx| vec![Some(ctx.grad.zip_map(ctx.output, |g, y| g * y))]),
        )
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.abs());
        self.record(
            &[a],
            out,
            Box::new(|ctx| {
                vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    /// `max(x, floor)` elementwise; gradient flows only where `x > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let f = T::from_f64(floor);
        let out = self.value(a).map(|x| if x > f { x } else { f });
        self.record(
            &[a],
            out,
            Box::new(move |ctx| {
                vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, x| {
                    if x > f {
                        g
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(
            &[a],
            out,
            Box::new(|ctx| vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.item()))]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Euclidean norm of all elements. The gradient at the origin is taken as zero.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.dot(v).sqrt());
        self.record(
            &[a],
            out,
            Box::new(|ctx| {
                let n = ctx.output.item();
                let g = ctx.grad.item();
                if n > T::zero() {
                    vec![Some(ctx.inputs[0].map(|x| g * x / n))]
                } else {
                    vec![Some(Tensor::zeros(ctx.inputs[0].shape()))]
                }
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self
            .value(a)
            .reshape(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        self.record(
            &[a],
            out,
            Box::new(|ctx| {
                vec![Some(Tensor::from_parts(
                    ctx.inputs[0].shape().to_vec(),
                    ctx.grad.data().to_vec(),
                ))]
            }),
        )
    }

    /// Axis permutation; `axes[i]` is the source axis placed at position `i`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let out = self.value(a).permute(axes).unwrap_or_else(|e| panic!("{e}"));
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.record(
            &[a],
            out,
            Box::new(move |ctx| vec![Some(ctx.grad.permute(&inverse).expect("inverse permutation"))]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, GradCheckConfig};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn arithmetic_gradients_match_finite_differences() {
        let a = t(&[2, 2], &[0.3, -1.2, 2.0, 0.7]);
        let b = t(&[2, 2], &[1.1, 0.4, -0.8, 2.5]);
        let report = check_gradients(
            &[a, b],
            |tape, v| {
                let s = tape.add(v[0], v[1]);
                let d = tape.sub(v[0], v[1]);
                let m = tape.mul(s, d);
                let q = tape.div(m, v[1]);
                let e = tape.exp(q);
                let sq = tape.square(e);
                let sc = tape.scale(sq, 0.3);
                let off = tape.add_scalar(sc, 1.0);
                let ab = tape.abs(v[0]);
                let all = tape.add(off, ab);
                let nrm = tape.l2_norm(all);
                let mn = tape.mean(all);
                tape.add(nrm, mn)
            },
            &GradCheckConfig::default(),
        );
        assert!(report.passed, "{report}");
    }

    #[test]
    fn permute_and_reshape_gradients() {
        let a = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i as f64 * 0.37).sin());
        let w = Tensor::<f64>::from_fn(&[4, 2, 3], |i| (i as f64 * 0.11).cos());
        let report = check_gradients(
            &[a, w],
            |tape, v| {
                let p = tape.permute(v[0], &[2, 0, 1]);
                let r = tape.reshape(v[1], &[4, 2, 3]);
                let m = tape.mul(p, r);
                let s = tape.square(m);
                tape.sum(s)
            },
            &GradCheckConfig::default(),
        );
        assert!(report.passed, "{report}");
    }

    #[test]
    fn clamp_min_blocks_gradient_below_floor() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[0.5, 2.0, -3.0]));
        let y = tape.clamp_min(x, 1.0);
        assert_eq!(tape.value(y).to_f64_vec(), vec![1.0, 2.0, 1.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().to_f64_vec(), vec![0.0, 1.0, 0.0]);
    }
}
