//! Image containers shared by the renderer, the correspondence module and the CLI.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Rgb = Vector3<f64>;

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Rgb>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, Rgb::zeros())
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.data[y * self.width + x] = c;
    }

    pub fn map(&self, f: impl Fn(Rgb) -> Rgb) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&c| f(c)).collect(),
        }
    }

    /// 2x box downsampling; odd trailing rows/columns average over the pixels that exist.
    pub fn downsample2(&self) -> Self {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        Self::from_fn(w, h, |x, y| {
            let mut acc = Rgb::zeros();
            let mut n = 0.0;
            for sy in 2 * y..(2 * y + 2).min(self.height) {
                for sx in 2 * x..(2 * x + 2).min(self.width) {
                    acc += self.get(sx, sy);
                    n += 1.0;
                }
            }
            acc / n
        })
    }

    /// Adjoint of [`ImageRgb::downsample2`]: spreads gradients of the small image back
    /// onto a `width x height` image.
    pub fn downsample2_adjoint(grad: &[Rgb], width: usize, height: usize) -> Vec<Rgb> {
        let w = width.div_ceil(2);
        let mut out = vec![Rgb::zeros(); width * height];
        for y in 0..height {
            for x in 0..width {
                let (cx, cy) = (x / 2, y / 2);
                let nx = (2 * cx + 2).min(width) - 2 * cx;
                let ny = (2 * cy + 2).min(height) - 2 * cy;
                out[y * width + x] = grad[cy * w + cx] / (nx * ny) as f64;
            }
        }
        out
    }

    /// Quantize to 8-bit RGB (row-major, 3 bytes per pixel).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|c| c.iter().map(|&v| quantize_u8(v)).collect::<Vec<_>>())
            .collect()
    }

    /// RGBA bytes with opaque alpha, the layout expected by browser canvases.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for c in &self.data {
            out.extend(c.iter().map(|&v| quantize_u8(v)));
            out.push(255);
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::input(format!(
                "expected {} bytes for a {width}x{height} RGB image, got {}",
                width * height * 3,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(3)
            .map(|p| Rgb::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect();
        Ok(Self { width, height, data })
    }

    #[cfg(feature = "png")]
    pub fn save_png(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads a PNG. Images with an alpha channel are composited over black and the
    /// alpha channel is returned as a foreground mask (`alpha > 0.5`).
    #[cfg(feature = "png")]
    pub fn load_png(path: impl AsRef<std::path::Path>) -> Result<(Self, Option<MaskImage>)> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let has_alpha = img.color().has_alpha();
        let rgba = img.to_rgba8();
        let (w, h) = (rgba.width() as usize, rgba.height() as usize);
        let mut out = ImageRgb::new(w, h);
        let mut mask = MaskImage::new(w, h, true);
        for (i, p) in rgba.pixels().enumerate() {
            let a = p[3] as f64 / 255.0;
            out.data[i] = Rgb::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0 * a;
            mask.data[i] = a > 0.5;
        }
        Ok((out, has_alpha.then_some(mask)))
    }
}

#[inline]
fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel optional ray length in world units.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Option<f64>>,
}

impl DepthMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.data[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| d.is_some()).count()
    }

    /// Normalized grayscale visualization: near is bright, missing depth is black.
    pub fn to_image(&self) -> ImageRgb {
        let valid = self.data.iter().flatten();
        let lo = valid.clone().cloned().fold(f64::INFINITY, f64::min);
        let hi = valid.cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-9);
        ImageRgb {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|d| match d {
                    Some(d) => Rgb::repeat(1.0 - 0.8 * (d - lo) / span),
                    None => Rgb::zeros(),
                })
                .collect(),
        }
    }
}

/// Binary per-pixel mask (`true` = foreground).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
