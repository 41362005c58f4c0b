//! Affine maps, batched matrix products and softmax.

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `out[m×n] += op(a) · op(b)` on row-major slices, where `op` optionally transposes.
///
/// `a` is `m×k` (or `k×m` when `ta`), `b` is `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<T: Scalar>(
    out: &mut [T],
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) {
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == T::zero() {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut s = T::zero();
                    for (&x, &y) in arow.iter().zip(brow) {
                        s += x * y;
                    }
                    out[i * n + j] += s;
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = a[p * m + i];
                    if av == T::zero() {
                        continue;
                    }
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = T::zero();
                    for p in 0..k {
                        s += a[p * m + i] * b[j * k + p];
                    }
                    out[i * n + j] += s;
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Fully connected layer `input[B,N] · weight[N,M] + bias[M]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        if self.shape(input).len() != 2 {
            return Err(Error::dim(
                "dense",
                format!("input must be [B,N], got {:?}", self.shape(input)),
            ));
        }
        self.linear(input, weight, Some(bias))
    }

    /// Affine map over the last axis: `input[..., N] · weight[N,M] (+ bias[M])`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let n = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != n {
            return Err(Error::dim(
                "linear",
                format!("input {xs:?} incompatible with weight {ws:?}"),
            ));
        }
        let m = ws[1];
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(Error::dim(
                    "linear",
                    format!("bias {:?} must be [{m}]", self.shape(b)),
                ));
            }
        }
        let rows = self.value(input).len() / n;
        let mut out = vec![T::zero(); rows * m];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv);
            }
        }
        gemm_acc(
            &mut out,
            self.value(input).data(),
            self.value(weight).data(),
            rows,
            n,
            m,
            false,
            false,
        );
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = m;
        let out = Tensor::from_parts(out_shape, out);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.record(
            &inputs,
            out,
            Box::new(move |ctx| {
                let (x, w, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
                let dx = ctx.needs[0].then(|| {
                    let mut d = vec![T::zero(); rows * n];
                    gemm_acc(&mut d, g.data(), w.data(), rows, m, n, false, true);
                    Tensor::from_parts(x.shape().to_vec(), d)
                });
                let dw = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); n * m];
                    gemm_acc(&mut d, x.data(), g.data(), n, rows, m, true, false);
                    Tensor::from_parts(vec![n, m], d)
                });
                let mut grads = vec![dx, dw];
                if ctx.inputs.len() == 3 {
                    let db = ctx.needs[2].then(|| {
                        let mut d = vec![T::zero(); m];
                        for row in g.data().chunks(m) {
                            for (a, &b) in d.iter_mut().zip(row) {
                                *a += b;
                            }
                        }
                        Tensor::from_parts(vec![m], d)
                    });
                    grads.push(db);
                }
                grads
            }),
        ))
    }

    /// Batched product `a[G,M,K] · b[G,K,N]`, or `a · bᵀ` with `b[G,N,K]` when `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::dim("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::dim(
                "bmm",
                format!("inner extents differ: {sa:?} x {sb:?} (transpose_b={transpose_b})"),
            ));
        }
        let mut out = vec![T::zero(); g * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for gi in 0..g {
                gemm_acc(
                    &mut out[gi * m * n..(gi + 1) * m * n],
                    &av[gi * m * k..(gi + 1) * m * k],
                    &bv[gi * k * n..(gi + 1) * k * n],
                    m,
                    k,
                    n,
                    false,
                    transpose_b,
                );
            }
        }
        let out = Tensor::from_parts(vec![g, m, n], out);
        Ok(self.record(
            &[a, b],
            out,
            Box::new(move |ctx| {
                let (av, bv, gv) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                let da = ctx.needs[0].then(|| {
                    let mut d = vec![T::zero(); g * m * k];
                    for gi in 0..g {
                        // dA = G · op(B)ᵀ
                        gemm_acc(
                            &mut d[gi * m * k..(gi + 1) * m * k],
                            &gv[gi * m * n..(gi + 1) * m * n],
                            &bv[gi * k * n..(gi + 1) * k * n],
                            m,
                            n,
                            k,
                            false,
                            !transpose_b,
                        );
                    }
                    Tensor::from_parts(vec![g, m, k], d)
                });
                let db = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); g * k * n];
                    for gi in 0..g {
                        let (gs, as_) = (&gv[gi * m * n..(gi + 1) * m * n], &av[gi * m * k..(gi + 1) * m * k]);
                        let ds = &mut d[gi * k * n..(gi + 1) * k * n];
                        if transpose_b {
                            // dB[N,K] = Gᵀ · A
                            gemm_acc(ds, gs, as_, n, m, k, true, false);
                        } else {
                            // dB[K,N] = Aᵀ · G
                            gemm_acc(ds, as_, gs, k, m, n, true, false);
                        }
                    }
                    Tensor::from_parts(ctx.inputs[1].shape().to_vec(), d)
                });
                vec![da, db]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        self.record(
            &[a],
            out,
            Box::new(move |ctx| {
                let y = ctx.output.data();
                let g = ctx.grad.data();
                let mut d = vec![T::zero(); y.len()];
                for ((drow, yrow), grow) in d.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: T = yrow.iter().zip(grow).map(|(&y, &g)| y * g).sum();
                    for ((dv, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = yv * (gv - dot);
                    }
                }
                vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), d))]
            }),
        )
    }
}
