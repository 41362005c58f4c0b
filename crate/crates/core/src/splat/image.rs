use std::io::{Cursor, Read, Write};
use std::path::Path;

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

const IMG_MAGIC: &[u8; 4] = b"IMGF";

/// Channel-last float image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::dim("image", format!("{height}x{width}x{channels} with {} values", data.len())));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, value: &[f32]) -> Result<Self> {
        Self::new(height, width, value.len(), value.repeat(height * width))
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f32]) -> Result<Self> {
        let n = height * width;
        if planar.len() != n * channels {
            return Err(Error::dim("image", format!("planar data has {} values for {height}x{width}x{channels}", planar.len())));
        }
        let data = (0..n * channels).map(|i| planar[(i % channels) * n + i / channels]).collect();
        Self::new(height, width, channels, data)
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn to_planar(&self) -> Vec<f32> {
        let n = self.height * self.width;
        (0..n * self.channels).map(|i| self.data[(i % n) * self.channels + i / n]).collect()
    }

    /// `[C, H, W]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(&[self.channels, self.height, self.width], self.to_planar().iter().map(|&v| T::from_f64(v as f64)).collect())
            .expect("image extents are non-zero")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::dim("image", format!("expected [C,H,W], got {:?}", t.shape())));
        };
        Self::from_planar(h, w, c, &t.data().iter().map(|v| v.as_f64() as f32).collect::<Vec<_>>())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn mean_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / self.data.len() as f64
    }

    fn same_extent(&self, other: &Self, op: &str) -> Result<()> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return Err(Error::dim(
                op,
                format!(
                    "{}x{}x{} vs {}x{}x{}",
                    self.height, self.width, self.channels, other.height, other.width, other.channels
                ),
            ));
        }
        Ok(())
    }

    /// 8-bit PNG (gray, RGB or RGBA by channel count); values are clamped and rounded.
    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            4 => png::ColorType::Rgba,
            c => return Err(Error::format("png", format!("cannot encode {c} channels"))),
        };
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        enc.write_header()
            .and_then(|mut wr| wr.write_image_data(&bytes))
            .map_err(|e| Error::format("png", e.to_string()))
    }

    pub fn read_png(bytes: &[u8]) -> Result<Self> {
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = dec.read_info().map_err(|e| Error::format("png", e.to_string()))?;
        let size = reader.output_buffer_size().ok_or_else(|| Error::format("png", "image too large"))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::format("png", e.to_string()))?;
        let channels = info.color_type.samples();
        let data = buf[..info.buffer_size()].iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(info.height as usize, info.width as usize, channels, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_png(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Self::read_png(&std::fs::read(path)?)
    }

    /// Lossless raw float format.
    pub fn write_img<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(IMG_MAGIC)?;
        for v in [self.height, self.width, self.channels] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_img<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0; 4];
        r.read_exact(&mut magic)?;
        if &magic != IMG_MAGIC {
            return Err(Error::format("img", format!("bad magic {magic:?}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::format("img", "dimensions overflow"))?;
        let mut bytes = vec![0; n * 4];
        r.read_exact(&mut bytes).map_err(|_| Error::format("img", format!("truncated: expected {n} floats")))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::new(dims[0], dims[1], dims[2], data).map_err(|e| Error::format("img", e.to_string()))
    }

    pub fn save_img(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_img(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_img(path: &Path) -> Result<Self> {
        Self::read_img(std::fs::read(path)?.as_slice())
    }
}

pub const PYRAMID_LEVELS: usize = 5;
const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Planar single-channel plane used inside the pyramid.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, r: isize, c: isize) -> f64 {
        let r = r.clamp(0, self.h as isize - 1) as usize;
        let c = c.clamp(0, self.w as isize - 1) as usize;
        self.v[r * self.w + c]
    }

    /// Separable 5-tap binomial blur with clamped borders, then keep even samples.
    fn down(&self) -> Plane {
        let (h2, w2) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut tmp = Plane { h: self.h, w: w2, v: vec![0.0; self.h * w2] };
        for r in 0..self.h {
            for c in 0..w2 {
                tmp.v[r * w2 + c] = (0..5).map(|k| BINOMIAL[k] * self.at(r as isize, (2 * c + k) as isize - 2)).sum();
            }
        }
        let mut out = Plane { h: h2, w: w2, v: vec![0.0; h2 * w2] };
        for r in 0..h2 {
            for c in 0..w2 {
                out.v[r * w2 + c] = (0..5).map(|k| BINOMIAL[k] * tmp.at((2 * r + k) as isize - 2, c as isize)).sum();
            }
        }
        out
    }

    /// Bilinear resampling to `h × w` (half-pixel aligned with `down`).
    fn up(&self, h: usize, w: usize) -> Plane {
        let sample = |pos: f64, n: usize| {
            let p = (pos * 0.5 - 0.25).clamp(0.0, (n - 1) as f64);
            let i = (p.floor() as usize).min(n - 1);
            let j = (i + 1).min(n - 1);
            (i, j, p - i as f64)
        };
        let mut v = vec![0.0; h * w];
        for r in 0..h {
            let (r0, r1, fr) = sample(r as f64 + 0.5, self.h);
            for c in 0..w {
                let (c0, c1, fc) = sample(c as f64 + 0.5, self.w);
                let top = self.v[r0 * self.w + c0] * (1.0 - fc) + self.v[r0 * self.w + c1] * fc;
                let bot = self.v[r1 * self.w + c0] * (1.0 - fc) + self.v[r1 * self.w + c1] * fc;
                v[r * w + c] = top * (1.0 - fr) + bot * fr;
            }
        }
        Plane { h, w, v }
    }
}

fn gaussian_pyramid(p: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![p];
    while out.len() < levels {
        let next = out.last().expect("non-empty").down();
        out.push(next);
    }
    out
}

fn laplacian_pyramid(p: Plane, levels: usize) -> Vec<Plane> {
    let g = gaussian_pyramid(p, levels);
    let mut out = Vec::with_capacity(levels);
    for i in 0..levels - 1 {
        let up = g[i + 1].up(g[i].h, g[i].w);
        out.push(Plane { h: g[i].h, w: g[i].w, v: g[i].v.iter().zip(&up.v).map(|(a, b)| a - b).collect() });
    }
    out.push(g[levels - 1].clone());
    out
}

fn collapse(pyr: Vec<Plane>) -> Plane {
    let mut it = pyr.into_iter().rev();
    let mut acc = it.next().expect("non-empty pyramid");
    for lvl in it {
        let up = acc.up(lvl.h, lvl.w);
        acc = Plane { h: lvl.h, w: lvl.w, v: lvl.v.iter().zip(&up.v).map(|(a, b)| a + b).collect() };
    }
    acc
}

fn plane_of(img: &Image, ch: usize) -> Plane {
    Plane {
        h: img.height,
        w: img.width,
        v: (0..img.height * img.width).map(|i| img.data[i * img.channels + ch] as f64).collect(),
    }
}

/// Multi-band blend: Laplacian pyramids of `base` and `refined` are mixed
/// level by level with a Gaussian pyramid of `mask` (1 selects `refined`).
///
/// `mask` has one channel or as many as the images.
pub fn pyramid_blend(base: &Image, refined: &Image, mask: &Image) -> Result<Image> {
    base.same_extent(refined, "pyramid_blend")?;
    if (mask.height, mask.width) != (base.height, base.width) || (mask.channels != 1 && mask.channels != base.channels) {
        return Err(Error::dim("pyramid_blend", format!("mask {}x{}x{}", mask.height, mask.width, mask.channels)));
    }
    if mask.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Data("blend mask values must lie in [0, 1]".into()));
    }
    let mut out = vec![0.0f32; base.data.len()];
    for ch in 0..base.channels {
        let lb = laplacian_pyramid(plane_of(base, ch), PYRAMID_LEVELS);
        let lr = laplacian_pyramid(plane_of(refined, ch), PYRAMID_LEVELS);
        let gm = gaussian_pyramid(plane_of(mask, if mask.channels == 1 { 0 } else { ch }), PYRAMID_LEVELS);
        let mixed: Vec<Plane> = lb
            .into_iter()
            .zip(lr)
            .zip(gm)
            .map(|((b, r), m)| Plane {
                h: b.h,
                w: b.w,
                v: b.v.iter().zip(&r.v).zip(&m.v).map(|((b, r), m)| m * r + (1.0 - m) * b).collect(),
            })
            .collect();
        for (i, v) in collapse(mixed).v.into_iter().enumerate() {
            out[i * base.channels + ch] = v as f32;
        }
    }
    Image::new(base.height, base.width, base.channels, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn planar_round_trip() {
        let a = noise(5, 7, 1);
        assert_eq!(Image::from_planar(5, 7, 3, &a.to_planar()).unwrap(), a);
        assert_eq!(Image::from_tensor(&a.to_tensor::<f32>()).unwrap(), a);
    }

    #[test]
    fn img_round_trip_is_lossless() {
        let a = noise(9, 4, 2);
        let mut buf = Vec::new();
        a.write_img(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"IMGF");
        assert_eq!(Image::read_img(buf.as_slice()).unwrap(), a);
        assert!(Image::read_img(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let a = noise(6, 10, 3);
        let mut buf = Vec::new();
        a.write_png(&mut buf).unwrap();
        let b = Image::read_png(&buf).unwrap();
        assert_eq!((b.height, b.width, b.channels), (6, 10, 3));
        assert!(a.max_abs_diff(&b) <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn blend_with_full_and_empty_mask() {
        let (a, b) = (noise(37, 53, 4), noise(37, 53, 5));
        let ones = Image::filled(37, 53, &[1.0]).unwrap();
        let zeros = Image::filled(37, 53, &[0.0]).unwrap();
        assert!(pyramid_blend(&a, &b, &ones).unwrap().max_abs_diff(&b) < 1e-5);
        assert!(pyramid_blend(&a, &b, &zeros).unwrap().max_abs_diff(&a) < 1e-5);
    }

    #[test]
    fn blend_of_constants_is_average() {
        let a = Image::filled(32, 48, &[0.2, 0.4, 0.9]).unwrap();
        let b = Image::filled(32, 48, &[0.6, 0.0, 0.1]).unwrap();
        let half = Image::filled(32, 48, &[0.5]).unwrap();
        let out = pyramid_blend(&a, &b, &half).unwrap();
        let expect = Image::filled(32, 48, &[0.4, 0.2, 0.5]).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn blend_rejects_bad_mask() {
        let a = noise(8, 8, 6);
        assert!(pyramid_blend(&a, &a, &Image::filled(8, 9, &[0.5]).unwrap()).is_err());
        assert!(pyramid_blend(&a, &a, &Image::filled(8, 8, &[1.5]).unwrap()).is_err());
    }
}
