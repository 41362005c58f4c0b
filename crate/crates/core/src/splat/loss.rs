use super::image::Image;
use super::types::{SplatLossWeights, RAW_WIDTH};
use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::row_norms;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window<T: Scalar>() -> Tensor<T> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    Tensor::from_fn(&[1, 1, SSIM_WINDOW, SSIM_WINDOW], |i| T::from_f64(g[i / SSIM_WINDOW] * g[i % SSIM_WINDOW] / (s * s)))
}

/// Gaussian-weighted local mean with zero padding; `x` is `[C, 1, H, W]`.
fn blur<T: Scalar>(tape: &mut Tape<T>, x: Var, window: Var) -> Result<Var> {
    let p = tape.pad2d(x, SSIM_WINDOW / 2)?;
    tape.conv2d(p, window, None, (1, 1))
}

/// Mean SSIM over pixels and channels of two `[C, H, W]` images.
pub fn ssim_var<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let shape = tape.shape(a).to_vec();
    if shape.len() != 3 || tape.shape(b) != shape.as_slice() {
        return Err(Error::dim("ssim", format!("{shape:?} vs {:?}", tape.shape(b))));
    }
    let img = [shape[0], 1, shape[1], shape[2]];
    let a = tape.reshape(a, &img);
    let b = tape.reshape(b, &img);
    let window = tape.constant(gaussian_window());
    let mu_a = blur(tape, a, window)?;
    let mu_b = blur(tape, b, window)?;
    let aa = tape.mul(a, a);
    let bb = tape.mul(b, b);
    let ab = tape.mul(a, b);
    let e_aa = blur(tape, aa, window)?;
    let e_bb = blur(tape, bb, window)?;
    let e_ab = blur(tape, ab, window)?;
    let mu_aa = tape.mul(mu_a, mu_a);
    let mu_bb = tape.mul(mu_b, mu_b);
    let mu_ab = tape.mul(mu_a, mu_b);
    let var_a = tape.sub(e_aa, mu_aa);
    let var_b = tape.sub(e_bb, mu_bb);
    let cov = tape.sub(e_ab, mu_ab);

    let n1 = tape.scale(mu_ab, 2.0);
    let n1 = tape.add_scalar(n1, SSIM_C1);
    let n2 = tape.scale(cov, 2.0);
    let n2 = tape.add_scalar(n2, SSIM_C2);
    let num = tape.mul(n1, n2);
    let d1 = tape.add(mu_aa, mu_bb);
    let d1 = tape.add_scalar(d1, SSIM_C1);
    let d2 = tape.add(var_a, var_b);
    let d2 = tape.add_scalar(d2, SSIM_C2);
    let den = tape.mul(d1, d2);
    let map = tape.div(num, den);
    Ok(tape.mean(map))
}

/// SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(Error::dim("ssim", format!("{}x{}x{} vs {}x{}x{}", a.height, a.width, a.channels, b.height, b.width, b.channels)));
    }
    let mut tape = Tape::<f64>::new();
    let (va, vb) = (tape.constant(a.to_tensor()), tape.constant(b.to_tensor()));
    let s = ssim_var(&mut tape, va, vb)?;
    Ok(tape.value(s).item())
}

pub fn d_ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

/// Columns `[from, to)` of a `[N, M]` matrix.
pub fn columns<T: Scalar>(tape: &mut Tape<T>, x: Var, from: usize, to: usize) -> Result<Var> {
    let &[n, m] = tape.shape(x) else {
        return Err(Error::dim("columns", format!("expected [N,M], got {:?}", tape.shape(x))));
    };
    if !(from < to && to <= m) {
        return Err(Error::dim("columns", format!("range {from}..{to} of {m} columns")));
    }
    let k = to - from;
    let data: Vec<T> = tape.value(x).data().chunks_exact(m).flat_map(|r| r[from..to].iter().copied()).collect();
    let out = Tensor::new(&[n, k], data)?;
    Ok(tape.record(
        &[x],
        out,
        Box::new(move |ctx| {
            let mut d = vec![T::zero(); n * m];
            for (dst, src) in d.chunks_exact_mut(m).zip(ctx.grad.data().chunks_exact(k)) {
                dst[from..to].copy_from_slice(src);
            }
            vec![Some(Tensor::new(&[n, m], d).expect("same extent"))]
        }),
    ))
}

pub struct SplatLossParts {
    pub total: Var,
    pub l1: f64,
    pub d_ssim: f64,
    pub pos: f64,
    pub scale: f64,
}

/// `(1-λ) L1 + λ D-SSIM + λ_pos L_pos + λ_scale L_scale`.
///
/// The regularizers are the mean over splats of `‖max(|μ|, ε_pos)‖₂` and
/// `‖max(s, ε_scale)‖₂`, so components under the threshold contribute a
/// constant and receive no gradient.
pub fn splat_training_loss<T: Scalar>(
    tape: &mut Tape<T>,
    rendered: Var,
    target: &Tensor<T>,
    raw: Var,
    weights: &SplatLossWeights,
) -> Result<SplatLossParts> {
    weights.validate()?;
    if tape.shape(rendered) != target.shape() {
        return Err(Error::dim("splat_loss", format!("render {:?} vs target {:?}", tape.shape(rendered), target.shape())));
    }
    if tape.shape(raw).len() != 2 || tape.shape(raw)[1] != RAW_WIDTH {
        return Err(Error::dim("splat_loss", format!("raw splats {:?}", tape.shape(raw))));
    }
    let t = tape.constant(target.clone());
    let diff = tape.sub(rendered, t);
    let ad = tape.abs(diff);
    let l1 = tape.mean(ad);
    let s = ssim_var(tape, rendered, t)?;
    let neg = tape.scale(s, -0.5);
    let dssim = tape.add_scalar(neg, 0.5);

    let mu = columns(tape, raw, 4, 7)?;
    let mu = tape.abs(mu);
    let mu = tape.clamp_min(mu, weights.eps_pos);
    let mu = row_norms(tape, mu)?;
    let pos = tape.mean(mu);
    let log_s = columns(tape, raw, 7, 10)?;
    let sc = tape.exp(log_s);
    let sc = tape.clamp_min(sc, weights.eps_scale);
    let sc = row_norms(tape, sc)?;
    let scale = tape.mean(sc);

    let a = tape.scale(l1, 1.0 - weights.lambda);
    let b = tape.scale(dssim, weights.lambda);
    let c = tape.scale(pos, weights.lambda_pos);
    let d = tape.scale(scale, weights.lambda_scale);
    let ab = tape.add(a, b);
    let cd = tape.add(c, d);
    let total = tape.add(ab, cd);
    let v = |tape: &Tape<T>, x: Var| tape.value(x).item().as_f64();
    Ok(SplatLossParts {
        l1: v(tape, l1),
        d_ssim: v(tape, dssim),
        pos: v(tape, pos),
        scale: v(tape, scale),
        total,
    })
}
