//! Spatial ops on `[B, C, H, W]` tensors: valid convolution, transposed
//! convolution, zero padding, bilinear upsampling and average pooling.

use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
}

fn four<T: Scalar>(t: &Tensor<T>, op: &str, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::dim(op, format!("{what} must be 4-D, got {s:?}"))),
    }
}

fn check_bias<T: Scalar>(tape: &Tape<T>, op: &str, bias: Option<Var>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        if tape.shape(b) != [cout] {
            return Err(Error::dim(
                op,
                format!("bias {:?} must be [{cout}]", tape.shape(b)),
            ));
        }
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: Option<&[T]>, b: usize, c: usize, plane: usize) {
    if let Some(bv) = bias {
        for bi in 0..b {
            for (ci, &v) in bv.iter().enumerate().take(c) {
                let o = (bi * c + ci) * plane;
                out[o..o + plane].iter_mut().for_each(|x| *x = v);
            }
        }
    }
}

fn bias_grad<T: Scalar>(g: &[T], b: usize, c: usize, plane: usize) -> Tensor<T> {
    let mut d = vec![T::zero(); c];
    for bi in 0..b {
        for (ci, dv) in d.iter_mut().enumerate() {
            let o = (bi * c + ci) * plane;
            *dv += g[o..o + plane].iter().copied().sum::<T>();
        }
    }
    Tensor::from_parts(vec![c], d)
}

/// Correlates `x` with `w` (`conv` geometry), accumulating into `out`.
fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    for bi in 0..g.b {
        for co in 0..g.cout {
            let obase = (bi * g.cout + co) * g.oh * g.ow;
            for ci in 0..g.cin {
                let xbase = (bi * g.cin + ci) * g.h * g.w;
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
                        for oy in 0..g.oh {
                            let xrow = xbase + (oy * g.sh + ki) * g.w + kj;
                            let orow = &mut out[obase + oy * g.ow..obase + (oy + 1) * g.ow];
                            if g.sw == 1 {
                                for (o, &xv) in orow.iter_mut().zip(&x[xrow..xrow + g.ow]) {
                                    *o += wv * xv;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += wv * x[xrow + ox * g.sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv_forward`] with respect to `x`: scatters `gy` back through `w`.
fn conv_input_adjoint<T: Scalar>(g: &ConvGeom, gy: &[T], w: &[T], dx: &mut [T]) {
    for bi in 0..g.b {
        for co in 0..g.cout {
            let obase = (bi * g.cout + co) * g.oh * g.ow;
            for ci in 0..g.cin {
                let xbase = (bi * g.cin + ci) * g.h * g.w;
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
                        for oy in 0..g.oh {
                            let xrow = xbase + (oy * g.sh + ki) * g.w + kj;
                            let grow = &gy[obase + oy * g.ow..obase + (oy + 1) * g.ow];
                            if g.sw == 1 {
                                for (d, &gv) in dx[xrow..xrow + g.ow].iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    dx[xrow + ox * g.sw] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of [`conv_forward`] with respect to `w`.
fn conv_weight_grad<T: Scalar>(g: &ConvGeom, x: &[T], gy: &[T], dw: &mut [T]) {
    for bi in 0..g.b {
        for co in 0..g.cout {
            let obase = (bi * g.cout + co) * g.oh * g.ow;
            for ci in 0..g.cin {
                let xbase = (bi * g.cin + ci) * g.h * g.w;
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let mut s = T::zero();
                        for oy in 0..g.oh {
                            let xrow = xbase + (oy * g.sh + ki) * g.w + kj;
                            let grow = &gy[obase + oy * g.ow..obase + (oy + 1) * g.ow];
                            if g.sw == 1 {
                                for (&xv, &gv) in x[xrow..xrow + g.ow].iter().zip(grow) {
                                    s += xv * gv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    s += x[xrow + ox * g.sw] * gv;
                                }
                            }
                        }
                        dw[((co * g.cin + ci) * g.kh + ki) * g.kw + kj] += s;
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Valid (unpadded) 2-D cross-correlation.
    ///
    /// `input[B,Cin,H,W]`, `weight[Cout,Cin,kh,kw]`, optional `bias[Cout]`;
    /// output extents are `floor((H-kh)/sh)+1` by `floor((W-kw)/sw)+1`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
    ) -> Result<Var> {
        let [b, cin, h, w] = four(self.value(input), "conv2d", "input")?;
        let [cout, wcin, kh, kw] = four(self.value(weight), "conv2d", "weight")?;
        if wcin != cin {
            return Err(Error::dim(
                "conv2d",
                format!("input has {cin} channels (axis 1), weight expects {wcin}"),
            ));
        }
        if kh > h || kw > w {
            return Err(Error::dim(
                "conv2d",
                format!("kernel ({kh},{kw}) exceeds input spatial extent ({h},{w}) on axes 2/3"),
            ));
        }
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        check_bias(self, "conv2d", bias, cout)?;
        let g = ConvGeom {
            b,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            sh,
            sw,
            oh: (h - kh) / sh + 1,
            ow: (w - kw) / sw + 1,
        };
        let plane = g.oh * g.ow;
        let mut out = vec![T::zero(); b * cout * plane];
        add_bias(&mut out, bias.map(|v| self.value(v).data()), b, cout, plane);
        conv_forward(&g, self.value(input).data(), self.value(weight).data(), &mut out);
        let out = Tensor::from_parts(vec![b, cout, g.oh, g.ow], out);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.record(
            &inputs,
            out,
            Box::new(move |ctx| {
                let (x, wt, gy) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
                let dx = ctx.needs[0].then(|| {
                    let mut d = vec![T::zero(); x.len()];
                    conv_input_adjoint(&g, gy, wt.data(), &mut d);
                    Tensor::from_parts(x.shape().to_vec(), d)
                });
                let dw = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); wt.len()];
                    conv_weight_grad(&g, x.data(), gy, &mut d);
                    Tensor::from_parts(wt.shape().to_vec(), d)
                });
                let mut grads = vec![dx, dw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| bias_grad(gy, g.b, g.cout, plane)));
                }
                grads
            }),
        ))
    }

    /// Transposed convolution (no padding): `input[B,Cin,H,W]`,
    /// `weight[Cin,Cout,kh,kw]`, output `(H-1)*sh+kh` by `(W-1)*sw+kw`.
    ///
    /// This is the exact adjoint of [`Tape::conv2d`] with the same weight tensor.
    pub fn transposed_conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
    ) -> Result<Var> {
        let [b, cin, h, w] = four(self.value(input), "transposed_conv2d", "input")?;
        let [wcin, cout, kh, kw] = four(self.value(weight), "transposed_conv2d", "weight")?;
        if wcin != cin {
            return Err(Error::dim(
                "transposed_conv2d",
                format!("input has {cin} channels (axis 1), weight expects {wcin}"),
            ));
        }
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 {
            return Err(Error::Config("transposed_conv2d stride must be >= 1".into()));
        }
        check_bias(self, "transposed_conv2d", bias, cout)?;
        let (oh, ow) = ((h - 1) * sh + kh, (w - 1) * sw + kw);
        // Viewed as the conv that maps [B,Cout,oh,ow] -> [B,Cin,h,w].
        let g = ConvGeom {
            b,
            cin: cout,
            h: oh,
            w: ow,
            cout: cin,
            kh,
            kw,
            sh,
            sw,
            oh: h,
            ow: w,
        };
        let plane = oh * ow;
        let mut out = vec![T::zero(); b * cout * plane];
        add_bias(&mut out, bias.map(|v| self.value(v).data()), b, cout, plane);
        conv_input_adjoint(&g, self.value(input).data(), self.value(weight).data(), &mut out);
        let out = Tensor::from_parts(vec![b, cout, oh, ow], out);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.record(
            &inputs,
            out,
            Box::new(move |ctx| {
                let (x, wt, gy) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
                let dx = ctx.needs[0].then(|| {
                    let mut d = vec![T::zero(); x.len()];
                    conv_forward(&g, gy, wt.data(), &mut d);
                    Tensor::from_parts(x.shape().to_vec(), d)
                });
                let dw = ctx.needs[1].then(|| {
                    let mut d = vec![T::zero(); wt.len()];
                    conv_weight_grad(&g, gy, x.data(), &mut d);
                    Tensor::from_parts(wt.shape().to_vec(), d)
                });
                let mut grads = vec![dx, dw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| bias_grad(gy, g.b, cout, plane)));
                }
                grads
            }),
        ))
    }

    /// Zero padding of `pad` texels on every side of the two spatial axes.
    pub fn pad2d(&mut self, input: Var, pad: usize) -> Result<Var> {
        let [b, c, h, w] = four(self.value(input), "pad2d", "input")?;
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); b * c * ph * pw];
        for p in 0..b * c {
            for y in 0..h {
                let src = &x[(p * h + y) * w..(p * h + y + 1) * w];
                let o = (p * ph + y + pad) * pw + pad;
                out[o..o + w].copy_from_slice(src);
            }
        }
        let out = Tensor::from_parts(vec![b, c, ph, pw], out);
        Ok(self.record(
            &[input],
            out,
            Box::new(move |ctx| {
                let gy = ctx.grad.data();
                let mut d = vec![T::zero(); b * c * h * w];
                for p in 0..b * c {
                    for y in 0..h {
                        let o = (p * ph + y + pad) * pw + pad;
                        d[(p * h + y) * w..(p * h + y + 1) * w].copy_from_slice(&gy[o..o + w]);
                    }
                }
                vec![Some(Tensor::from_parts(vec![b, c, h, w], d))]
            }),
        ))
    }

    /// Bilinear 2x upsampling with half-pixel centers and edge clamping.
    pub fn upsample_bilinear2x(&mut self, input: Var) -> Result<Var> {
        let [b, c, h, w] = four(self.value(input), "upsample_bilinear2x", "input")?;
        let ry = bilinear_taps(h);
        let rx = bilinear_taps(w);
        let (oh, ow) = (2 * h, 2 * w);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        for p in 0..b * c {
            let xp = &x[p * h * w..(p + 1) * h * w];
            let op = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
                let (fy, gy): (T, T) = (T::from_f64(fy), T::from_f64(1.0 - fy));
                for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                    let (fx, gx): (T, T) = (T::from_f64(fx), T::from_f64(1.0 - fx));
                    op[oy * ow + ox] = gy * (gx * xp[y0 * w + x0] + fx * xp[y0 * w + x1])
                        + fy * (gx * xp[y1 * w + x0] + fx * xp[y1 * w + x1]);
                }
            }
        }
        let out = Tensor::from_parts(vec![b, c, oh, ow], out);
        Ok(self.record(
            &[input],
            out,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut d = vec![T::zero(); b * c * h * w];
                for p in 0..b * c {
                    let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                    let dp = &mut d[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
                        let (fy, gy): (T, T) = (T::from_f64(fy), T::from_f64(1.0 - fy));
                        for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                            let (fx, gx): (T, T) = (T::from_f64(fx), T::from_f64(1.0 - fx));
                            let v = gp[oy * ow + ox];
                            dp[y0 * w + x0] += gy * gx * v;
                            dp[y0 * w + x1] += gy * fx * v;
                            dp[y1 * w + x0] += fy * gx * v;
                            dp[y1 * w + x1] += fy * fx * v;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![b, c, h, w], d))]
            }),
        ))
    }

    /// Valid average pooling.
    pub fn avgpool2d(&mut self, input: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let [b, c, h, w] = four(self.value(input), "avgpool2d", "input")?;
        let ((kh, kw), (sh, sw)) = (kernel, stride);
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::Config("avgpool2d kernel and stride must be >= 1".into()));
        }
        if kh > h || kw > w {
            return Err(Error::dim(
                "avgpool2d",
                format!("kernel ({kh},{kw}) larger than input ({h},{w})"),
            ));
        }
        let (oh, ow) = ((h - kh) / sh + 1, (w - kw) / sw + 1);
        let inv = T::from_f64(1.0 / (kh * kw) as f64);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        for p in 0..b * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = T::zero();
                    for ki in 0..kh {
                        let row = (p * h + oy * sh + ki) * w + ox * sw;
                        s += x[row..row + kw].iter().copied().sum::<T>();
                    }
                    out[(p * oh + oy) * ow + ox] = s * inv;
                }
            }
        }
        let out = Tensor::from_parts(vec![b, c, oh, ow], out);
        Ok(self.record(
            &[input],
            out,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut d = vec![T::zero(); b * c * h * w];
                for p in 0..b * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let v = g[(p * oh + oy) * ow + ox] * inv;
                            for ki in 0..kh {
                                let row = (p * h + oy * sh + ki) * w + ox * sw;
                                d[row..row + kw].iter_mut().for_each(|e| *e += v);
                            }
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![b, c, h, w], d))]
            }),
        ))
    }
}

/// Source taps `(i0, i1, frac)` for each output index of a 2x upsample.
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
