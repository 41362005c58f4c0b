use super::config::LossWeights;
use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Total loss variable and the value of each term (already weighted-free).
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub rec: f64,
    pub smooth: f64,
}

/// 4-neighbor Laplacian of every `[H, W]` plane of `x[B, C, H, W]`, kept
/// only at interior texels (the texel and its four neighbors all masked).
///
/// Restricting to the interior means mask borders never see a one-sided
/// stencil, so constants and linear ramps score exactly zero. The stencil is
/// symmetric, so the backward pass restricts the gradient to the interior and
/// applies the same stencil.
pub fn masked_laplacian<T: Scalar>(tape: &mut Tape<T>, x: Var, mask: &[u8]) -> Result<Var> {
    let &[b, c, h, w] = tape.shape(x) else {
        return Err(Error::dim("masked_laplacian", format!("expected [B,C,H,W], got {:?}", tape.shape(x))));
    };
    if mask.len() != b * h * w {
        return Err(Error::dim("masked_laplacian", format!("mask has {} texels, need {}", mask.len(), b * h * w)));
    }
    let interior: Vec<bool> = (0..b * h * w)
        .map(|k| {
            let (r, col) = ((k / w) % h, k % w);
            mask[k] != 0
                && r > 0
                && r + 1 < h
                && col > 0
                && col + 1 < w
                && mask[k - w] != 0
                && mask[k + w] != 0
                && mask[k - 1] != 0
                && mask[k + 1] != 0
        })
        .collect();
    let mask = mask.to_vec();
    let restrict = move |v: &mut [T]| {
        for (k, x) in v.iter_mut().enumerate() {
            let (bi, i) = (k / (c * h * w), k % (h * w));
            if !interior[bi * h * w + i] {
                *x = T::zero();
            }
        }
    };
    let stencil = move |src: &[T]| -> Vec<T> {
        let mut out = vec![T::zero(); src.len()];
        for bi in 0..b {
            let m = &mask[bi * h * w..(bi + 1) * h * w];
            for ci in 0..c {
                let off = (bi * c + ci) * h * w;
                let plane = &src[off..off + h * w];
                let dst = &mut out[off..off + h * w];
                for r in 0..h {
                    for col in 0..w {
                        let i = r * w + col;
                        if m[i] == 0 {
                            continue;
                        }
                        let x0 = plane[i];
                        let mut acc = T::zero();
                        if r > 0 && m[i - w] != 0 {
                            acc += plane[i - w] - x0;
                        }
                        if r + 1 < h && m[i + w] != 0 {
                            acc += plane[i + w] - x0;
                        }
                        if col > 0 && m[i - 1] != 0 {
                            acc += plane[i - 1] - x0;
                        }
                        if col + 1 < w && m[i + 1] != 0 {
                            acc += plane[i + 1] - x0;
                        }
                        dst[i] = acc;
                    }
                }
            }
        }
        out
    };
    let shape = tape.shape(x).to_vec();
    let mut out = stencil(tape.value(x).data());
    restrict(&mut out);
    let out = Tensor::new(&shape, out)?;
    Ok(tape.record(
        &[x],
        out,
        Box::new(move |ctx| {
            let mut g = ctx.grad.data().to_vec();
            restrict(&mut g);
            vec![Some(Tensor::new(ctx.grad.shape(), stencil(&g)).expect("same shape"))]
        }),
    ))
}

/// Euclidean norm of each row of `x[R, N]`, returned as `[R]`; gradient 0 at a zero row.
pub fn row_norms<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let &[rows, n] = tape.shape(x) else {
        return Err(Error::dim("row_norms", format!("expected [R,N], got {:?}", tape.shape(x))));
    };
    let norms: Vec<T> = tape
        .value(x)
        .data()
        .chunks_exact(n)
        .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt())
        .collect();
    let out = Tensor::new(&[rows], norms)?;
    Ok(tape.record(
        &[x],
        out,
        Box::new(move |ctx| {
            let mut d = vec![T::zero(); rows * n];
            for (ri, (src, dst)) in ctx.inputs[0].data().chunks_exact(n).zip(d.chunks_exact_mut(n)).enumerate() {
                let nv = ctx.output.data()[ri];
                if nv > T::zero() {
                    let g = ctx.grad.data()[ri] / nv;
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o = g * v;
                    }
                }
            }
            vec![Some(Tensor::new(&[rows, n], d).expect("same extent"))]
        }),
    ))
}

/// `λ_rec · masked MSE + λ_smooth · Σ_c ‖Δ pred_c‖ / 3HW` (Laplacian over the
/// mask interior, see [`masked_laplacian`]), averaged over the batch.
///
/// `target` is `[B, 3, H, W]`, `mask` is `B·H·W` bytes. Both terms use the
/// `1/3HW` normalization over the full map, so the reconstruction term of a
/// uniform error `δ` is `δ² · masked fraction`.
pub fn position_map_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    mask: &[u8],
    weights: &LossWeights,
) -> Result<LossParts> {
    let shape = tape.shape(pred).to_vec();
    if shape != target.shape() || shape.len() != 4 || shape[1] != 3 {
        return Err(Error::dim(
            "position_map_loss",
            format!("prediction {shape:?} vs target {:?}", target.shape()),
        ));
    }
    let (b, h, w) = (shape[0], shape[2], shape[3]);
    if mask.len() != b * h * w {
        return Err(Error::dim("position_map_loss", format!("mask has {} texels, need {}", mask.len(), b * h * w)));
    }
    for bi in 0..b {
        if mask[bi * h * w..(bi + 1) * h * w].iter().all(|&m| m == 0) {
            return Err(Error::Contract(format!("empty mask for batch element {bi}")));
        }
    }
    let norm = 1.0 / (3 * h * w * b) as f64;
    let m3 = Tensor::from_fn(&shape, |i| {
        let (bi, rest) = (i / (3 * h * w), i % (h * w));
        if mask[bi * h * w + rest] != 0 {
            T::one()
        } else {
            T::zero()
        }
    });
    let m3 = tape.constant(m3);
    let tv = tape.constant(target.clone());
    let diff = tape.sub(pred, tv);
    let diff = tape.mul(diff, m3);
    let sq = tape.square(diff);
    let sq = tape.sum(sq);
    let rec = tape.scale(sq, norm);

    let lap = masked_laplacian(tape, pred, mask)?;
    let planes = tape.reshape(lap, &[b * 3, h * w]);
    let norms = row_norms(tape, planes)?;
    let s = tape.sum(norms);
    let smooth = tape.scale(s, norm);

    let (rv, sv) = (tape.value(rec).item().as_f64(), tape.value(smooth).item().as_f64());
    let a = tape.scale(rec, weights.lambda_rec);
    let c = tape.scale(smooth, weights.lambda_smooth);
    Ok(LossParts {
        total: tape.add(a, c),
        rec: rv,
        smooth: sv,
    })
}
