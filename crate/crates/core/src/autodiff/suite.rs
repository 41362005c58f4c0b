//! Finite-difference checks of every differentiable tape op on random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_gradients_named, GradCheckConfig, GradCheckReport};
use super::ops::{AttentionParams, BatchNormState, GeluMode};
use super::tape::{Tape, Var};
use super::tensor::Tensor;

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

/// One layer case: named random inputs and the scalar function over them.
struct Case {
    name: &'static str,
    inputs: Vec<(String, Tensor<f64>)>,
    build: Build,
}

struct Inputs {
    rng: ChaCha8Rng,
    list: Vec<(String, Tensor<f64>)>,
}

impl Inputs {
    fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), list: Vec::new() }
    }

    fn uniform(mut self, name: &str, shape: &[usize], lo: f64, hi: f64) -> Self {
        let t = Tensor::from_fn(shape, |_| self.rng.random_range(lo..hi));
        self.list.push((name.into(), t));
        self
    }

    /// Values with magnitude in `[gap, 1]` and random sign, away from kinks at zero.
    fn signed_away_from_zero(mut self, name: &str, shape: &[usize], gap: f64) -> Self {
        let t = Tensor::from_fn(shape, |_| {
            let m = self.rng.random_range(gap..1.0);
            if self.rng.random::<bool>() {
                m
            } else {
                -m
            }
        });
        self.list.push((name.into(), t));
        self
    }

    /// Fixed random weights for the scalar readout, so no gradient cancels by symmetry.
    fn readout(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.rng.random_range(-1.0..1.0))
    }
}

/// `Σ w ⊙ y` with the given fixed weights.
fn project(tape: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Var {
    let w = tape.constant(w.clone());
    let p = tape.mul(y, w);
    tape.sum(p)
}

fn cases(seed: u64) -> Vec<Case> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, inputs: Inputs, build: Build| {
        out.push(Case { name, inputs: inputs.list, build });
    };

    let inp = Inputs::new(seed)
        .uniform("a", &[2, 3], -1.0, 1.0)
        .uniform("b", &[2, 3], 0.5, 1.5)
        .signed_away_from_zero("c", &[2, 3], 0.1);
    push(
        "elementwise",
        inp,
        Box::new(|t, v| {
            let s = t.add(v[0], v[1]);
            let d = t.sub(v[0], v[1]);
            let m = t.mul(s, d);
            let q = t.div(m, v[1]);
            let e = t.exp(q);
            let sq = t.square(e);
            let sc = t.scale(sq, 0.3);
            let off = t.add_scalar(sc, -0.2);
            let ng = t.neg(off);
            let ab = t.abs(v[2]);
            let all = t.add(ng, ab);
            let n = t.l2_norm(all);
            let mn = t.mean(all);
            t.add(n, mn)
        }),
    );

    let mut inp = Inputs::new(seed).uniform("x", &[2, 3], -2.0, 2.0);
    // Keep inputs at least 0.1 from the floor so the kink is never straddled.
    for (_, x) in &mut inp.list {
        *x = x.map(|v| if (v - 0.25).abs() < 0.1 { v + 0.2 } else { v });
    }
    let w = inp.readout(&[2, 3]);
    push("clamp_min", inp, Box::new(move |t, v| {
        let y = t.clamp_min(v[0], 0.25);
        project(t, y, &w)
    }));

    let mut inp = Inputs::new(seed).uniform("a", &[2, 3, 4], -1.0, 1.0).uniform("b", &[4, 6], -1.0, 1.0);
    let w = inp.readout(&[4, 2, 3]);
    push("reshape_permute", inp, Box::new(move |t, v| {
        let p = t.permute(v[0], &[2, 0, 1]);
        let r = t.reshape(v[1], &[4, 2, 3]);
        let m = t.mul(p, r);
        project(t, m, &w)
    }));

    let mut inp = Inputs::new(seed)
        .uniform("x", &[3, 4], -1.0, 1.0)
        .uniform("weight", &[4, 5], -1.0, 1.0)
        .uniform("bias", &[5], -1.0, 1.0);
    let w = inp.readout(&[3, 5]);
    push("dense", inp, Box::new(move |t, v| {
        let y = t.dense(v[0], v[1], v[2]).unwrap();
        project(t, y, &w)
    }));

    let mut inp = Inputs::new(seed).uniform("x", &[2, 3, 4], -1.0, 1.0).uniform("weight", &[4, 2], -1.0, 1.0);
    let w = inp.readout(&[2, 3, 2]);
    push("linear", inp, Box::new(move |t, v| {
        let y = t.linear(v[0], v[1], None).unwrap();
        project(t, y, &w)
    }));

    let mut inp = Inputs::new(seed)
        .uniform("a", &[2, 3, 4], -1.0, 1.0)
        .uniform("b", &[2, 4, 5], -1.0, 1.0)
        .uniform("bt", &[2, 5, 4], -1.0, 1.0);
    let w1 = inp.readout(&[2, 3, 5]);
    let w2 = inp.readout(&[2, 3, 5]);
    push("bmm", inp, Box::new(move |t, v| {
        let y = t.bmm(v[0], v[1], false).unwrap();
        let z = t.bmm(v[0], v[2], true).unwrap();
        let a = project(t, y, &w1);
        let b = project(t, z, &w2);
        t.add(a, b)
    }));

    let mut inp = Inputs::new(seed).uniform("x", &[3, 5], -2.0, 2.0);
    let w = inp.readout(&[3, 5]);
    push("softmax", inp, Box::new(move |t, v| {
        let y = t.softmax(v[0]);
        project(t, y, &w)
    }));

    let mut inp = Inputs::new(seed)
        .uniform("x", &[2, 2, 5, 7], -1.0, 1.0)
        .uniform("weight", &[3, 2, 2, 3], -1.0, 1.0)
        .uniform("bias", &[3], -1.0, 1.0);
    let w = inp.readout(&[2, 3, 4, 3]);
    push("conv2d", inp, Box::new(move |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), (1, 2)).unwrap();
        project(t, y, &w)
    }));

    let mut inp = Inputs::new(seed)
        .uniform("x", &[2, 3, 3, 2], -1.0, 1.0)
        .uniform("weight", &[3, 2, 2, 3], -1.0, 1.0)
        .uniform("bias", &[2], -1.0, 1.0);
    let w = inp.readout(&[2, 2, 6, 5]);
    push("transposed_conv2d", inp, Box::new(move |t, v| {
        let y = t.transposed_conv2d(v[0], v[1], Some(v[2]), (2, 2)).unwrap();
        project(t, y, &w)
    }));

    let mut inp = Inputs::new(seed).uniform("x", &[1, 2, 3, 4], -1.0, 1.0);
    let w = inp.readout(&[1, 2, 10, 12]);
    push("pad2d_upsample", inp, Box::new(move |t, v| {
        let y = t.pad2d(v[0], 1).unwrap();
        let y = t.upsample_bilinear2x(y).unwrap();
        project(t, y, &w)
    }));

    let mut inp = Inputs::new(seed).uniform("x", &[2, 2, 4, 9], -1.0, 1.0);
    let w = inp.readout(&[2, 2, 2, 4]);
    push("avgpool2d", inp, Box::new(move |t, v| {
        let y = t.avgpool2d(v[0], (2, 3), (2, 2)).unwrap();
        project(t, y, &w)
    }));

    for training in [true, false] {
        let mut inp = Inputs::new(seed)
            .uniform("x", &[2, 3, 2, 3], -1.0, 1.0)
            .uniform("gamma", &[3], 0.5, 1.5)
            .uniform("beta", &[3], -0.5, 0.5);
        let w = inp.readout(&[2, 3, 2, 3]);
        let state = BatchNormState {
            running_mean: vec![0.1, -0.2, 0.05],
            running_var: vec![0.8, 1.3, 0.6],
        };
        push(
            if training { "batchnorm2d_train" } else { "batchnorm2d_eval" },
            inp,
            Box::new(move |t, v| {
                let mut s = state.clone();
                let y = t.batchnorm2d(v[0], v[1], v[2], &mut s, training).unwrap();
                project(t, y, &w)
            }),
        );
    }

    let mut inp = Inputs::new(seed)
        .uniform("x", &[2, 3, 5], -1.0, 1.0)
        .uniform("gamma", &[5], 0.5, 1.5)
        .uniform("beta", &[5], -0.5, 0.5);
    let w = inp.readout(&[2, 3, 5]);
    push("layer_norm", inp, Box::new(move |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
        project(t, y, &w)
    }));

    let mut inp = Inputs::new(seed).signed_away_from_zero("x", &[3, 4], 0.05);
    let w = inp.readout(&[3, 4]);
    push("elu", inp, Box::new(move |t, v| {
        let y = t.elu(v[0]);
        project(t, y, &w)
    }));

    for (name, mode) in [("gelu_tanh", GeluMode::Tanh), ("gelu_erf", GeluMode::Erf)] {
        let mut inp = Inputs::new(seed).uniform("x", &[3, 4], -3.0, 3.0);
        let w = inp.readout(&[3, 4]);
        push(name, inp, Box::new(move |t, v| {
            let y = t.gelu(v[0], mode);
            project(t, y, &w)
        }));
    }

    let mut inp = Inputs::new(seed).uniform("x", &[4, 5], -1.0, 1.0);
    let w = inp.readout(&[4, 5]);
    push("dropout", inp, Box::new(move |t, v| {
        // Same mask on every evaluation.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = t.dropout(v[0], 0.3, true, &mut rng).unwrap();
        project(t, y, &w)
    }));

    let e = 4;
    let mut inp = Inputs::new(seed).uniform("x", &[2, 3, e], -1.0, 1.0);
    for p in ["q", "k", "v", "o"] {
        inp = inp.uniform(&format!("w{p}"), &[e, e], -0.7, 0.7).uniform(&format!("b{p}"), &[e], -0.3, 0.3);
    }
    let w = inp.readout(&[2, 3, e]);
    push("attention", inp, Box::new(move |t, v| {
        let p = AttentionParams {
            wq: v[1],
            bq: v[2],
            wk: v[3],
            bk: v[4],
            wv: v[5],
            bv: v[6],
            wo: v[7],
            bo: v[8],
        };
        let y = t.multihead_self_attention(v[0], 2, &p).unwrap();
        project(t, y, &w)
    }));

    out
}

/// Names of the layer cases, in the order [`layer_gradient_suite`] reports them.
pub fn layer_case_names() -> Vec<&'static str> {
    cases(0).into_iter().map(|c| c.name).collect()
}

/// Gradient check of every layer case on inputs drawn from `seed`.
pub fn layer_gradient_suite(seed: u64, cfg: &GradCheckConfig) -> Vec<(&'static str, GradCheckReport)> {
    cases(seed)
        .into_iter()
        .map(|c| {
            let cfg = GradCheckConfig { seed, ..cfg.clone() };
            (c.name, check_gradients_named(&c.inputs, &c.build, &cfg))
        })
        .collect()
}
