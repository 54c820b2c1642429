//! Built-in multi-scale descriptor.
//!
//! Per scale `s`: Gaussian blur with sigma `s`, then per cell the mean blurred RGB
//! and the mean smoothed magnitude of the horizontal and vertical luminance
//! derivatives. Every step is a fixed linear filter except one smooth absolute value,
//! so the backward pass is exact.

use crate::error::{Error, Result};
use crate::image::{ImageRgb, Rgb};

use super::{FeatureExtractor, FeatureMap};

/// Smoothing of `|g|` as `sqrt(g^2 + eps^2) - eps`.
const ABS_EPS: f64 = 1e-2;
const CHANNELS_PER_SCALE: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct BuiltinDescriptor {
    pub stride: usize,
    pub scales: Vec<f64>,
    /// Fixed gain on the derivative channels.
    pub gradient_gain: f64,
}

impl BuiltinDescriptor {
    pub fn new(stride: usize, scales: Vec<f64>) -> Self {
        Self {
            stride,
            scales,
            gradient_gain: 2.0,
        }
    }

    /// Stride-8 map used for the feature loss.
    pub fn mid() -> Self {
        Self::new(8, vec![1.0, 2.0, 4.0])
    }

    /// Stride-16 map used for color matching.
    pub fn coarse() -> Self {
        Self::new(16, vec![2.0, 4.0, 8.0])
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

#[inline]
fn clamp_idx(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Separable blur of a scalar plane with replicated borders.
fn blur(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * plane[y * w + clamp_idx(x as i64 + k as i64 - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * tmp[clamp_idx(y as i64 + k as i64 - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Adjoint of [`blur`].
fn blur_adjoint(grad: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (k, kv) in kernel.iter().enumerate() {
                tmp[clamp_idx(y as i64 + k as i64 - r, h) * w + x] += kv * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = tmp[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (k, kv) in kernel.iter().enumerate() {
                out[y * w + clamp_idx(x as i64 + k as i64 - r, w)] += kv * g;
            }
        }
    }
    out
}

/// Central differences with replicated borders.
fn derivatives(lum: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let xp = clamp_idx(x as i64 + 1, w);
            let xm = clamp_idx(x as i64 - 1, w);
            let yp = clamp_idx(y as i64 + 1, h);
            let ym = clamp_idx(y as i64 - 1, h);
            gx[y * w + x] = 0.5 * (lum[y * w + xp] - lum[y * w + xm]);
            gy[y * w + x] = 0.5 * (lum[yp * w + x] - lum[ym * w + x]);
        }
    }
    (gx, gy)
}

fn derivatives_adjoint(dgx: &[f64], dgy: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let xp = clamp_idx(x as i64 + 1, w);
            let xm = clamp_idx(x as i64 - 1, w);
            let yp = clamp_idx(y as i64 + 1, h);
            let ym = clamp_idx(y as i64 - 1, h);
            out[y * w + xp] += 0.5 * dgx[i];
            out[y * w + xm] -= 0.5 * dgx[i];
            out[yp * w + x] += 0.5 * dgy[i];
            out[ym * w + x] -= 0.5 * dgy[i];
        }
    }
    out
}

#[inline]
fn smooth_abs(g: f64) -> f64 {
    (g * g + ABS_EPS * ABS_EPS).sqrt() - ABS_EPS
}

#[inline]
fn smooth_abs_grad(g: f64) -> f64 {
    g / (g * g + ABS_EPS * ABS_EPS).sqrt()
}

struct ScaleState {
    blurred: [Vec<f64>; 3],
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl BuiltinDescriptor {
    fn check(&self, image: &ImageRgb) -> Result<()> {
        if image.width < self.stride || image.height < self.stride {
            return Err(Error::input(format!(
                "image {}x{} is smaller than one {}x{} descriptor cell",
                image.width, image.height, self.stride, self.stride
            )));
        }
        Ok(())
    }

    fn planes(image: &ImageRgb) -> [Vec<f64>; 3] {
        std::array::from_fn(|c| image.data.iter().map(|p| p[c]).collect())
    }

    fn scale_state(&self, planes: &[Vec<f64>; 3], w: usize, h: usize, sigma: f64) -> ScaleState {
        let kernel = gaussian_kernel(sigma);
        let blurred: [Vec<f64>; 3] = std::array::from_fn(|c| blur(&planes[c], w, h, &kernel));
        let lum: Vec<f64> = (0..w * h)
            .map(|i| (blurred[0][i] + blurred[1][i] + blurred[2][i]) / 3.0)
            .collect();
        let (gx, gy) = derivatives(&lum, w, h);
        ScaleState { blurred, gx, gy }
    }

    /// Cell of each pixel, and pixel counts per cell.
    fn cell_layout(&self, w: usize, h: usize) -> (usize, usize, Vec<usize>) {
        let gw = w.div_ceil(self.stride);
        let gh = h.div_ceil(self.stride);
        let mut counts = vec![0usize; gw * gh];
        for y in 0..h {
            for x in 0..w {
                counts[(y / self.stride) * gw + x / self.stride] += 1;
            }
        }
        (gh, gw, counts)
    }
}

impl FeatureExtractor for BuiltinDescriptor {
    fn name(&self) -> &str {
        "builtin"
    }

    fn stride(&self) -> usize {
        self.stride
    }

    fn channels(&self) -> usize {
        self.scales.len() * CHANNELS_PER_SCALE
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn extract(&self, image: &ImageRgb) -> Result<FeatureMap> {
        self.check(image)?;
        let (w, h) = (image.width, image.height);
        let (gh, gw, counts) = self.cell_layout(w, h);
        let channels = self.channels();
        let mut map = FeatureMap::zeros(gh, gw, channels, self.stride, (h, w));
        let planes = Self::planes(image);
        for (s, &sigma) in self.scales.iter().enumerate() {
            let st = self.scale_state(&planes, w, h, sigma);
            let base = s * CHANNELS_PER_SCALE;
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let cell = (y / self.stride) * gw + x / self.stride;
                    let f = &mut map.data[cell * channels + base..cell * channels + base + CHANNELS_PER_SCALE];
                    f[0] += st.blurred[0][i];
                    f[1] += st.blurred[1][i];
                    f[2] += st.blurred[2][i];
                    f[3] += self.gradient_gain * smooth_abs(st.gx[i]);
                    f[4] += self.gradient_gain * smooth_abs(st.gy[i]);
                }
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            map.cell_mut(cell).iter_mut().for_each(|v| *v /= n as f64);
        }
        Ok(map)
    }

    fn backward(&self, image: &ImageRgb, grad: &FeatureMap) -> Result<Vec<Rgb>> {
        self.check(image)?;
        let (w, h) = (image.width, image.height);
        let (gh, gw, counts) = self.cell_layout(w, h);
        let channels = self.channels();
        if grad.grid_h != gh || grad.grid_w != gw || grad.channels != channels {
            return Err(Error::input("feature gradient shape does not match the image"));
        }
        let planes = Self::planes(image);
        let mut out = vec![Rgb::zeros(); w * h];
        for (s, &sigma) in self.scales.iter().enumerate() {
            let st = self.scale_state(&planes, w, h, sigma);
            let base = s * CHANNELS_PER_SCALE;
            let mut d_blur: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; w * h]);
            let mut dgx = vec![0.0; w * h];
            let mut dgy = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let cell = (y / self.stride) * gw + x / self.stride;
                    let inv = 1.0 / counts[cell] as f64;
                    let g = &grad.data[cell * channels + base..cell * channels + base + CHANNELS_PER_SCALE];
                    for c in 0..3 {
                        d_blur[c][i] = g[c] * inv;
                    }
                    dgx[i] = g[3] * inv * self.gradient_gain * smooth_abs_grad(st.gx[i]);
                    dgy[i] = g[4] * inv * self.gradient_gain * smooth_abs_grad(st.gy[i]);
                }
            }
            let d_lum = derivatives_adjoint(&dgx, &dgy, w, h);
            let kernel = gaussian_kernel(sigma);
            for c in 0..3 {
                for i in 0..w * h {
                    d_blur[c][i] += d_lum[i] / 3.0;
                }
                let d_img = blur_adjoint(&d_blur[c], w, h, &kernel);
                for i in 0..w * h {
                    out[i][c] += d_img[i];
                }
            }
        }
        Ok(out)
    }
}
