use std::path::Path;

use crate::error::{Error, Result};
use crate::image::DepthMap;

const MAGIC: &[u8; 4] = b"RNFM";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 * 7;

/// Dense grid of feature vectors, row-major and channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    /// Pixels per cell along each axis.
    pub stride: usize,
    /// `(height, width)` of the image the map was computed from.
    pub source_dims: (usize, usize),
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(grid_h: usize, grid_w: usize, channels: usize, stride: usize, source_dims: (usize, usize)) -> Self {
        Self {
            grid_h,
            grid_w,
            channels,
            stride,
            source_dims,
            data: vec![0.0; grid_h * grid_w * channels],
        }
    }

    pub fn zeros_like(other: &FeatureMap) -> Self {
        Self::zeros(
            other.grid_h,
            other.grid_w,
            other.channels,
            other.stride,
            other.source_dims,
        )
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    #[inline]
    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn cell_at(&self, row: usize, col: usize) -> &[f64] {
        self.cell(row * self.grid_w + col)
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.grid_h == other.grid_h && self.grid_w == other.grid_w && self.channels == other.channels
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.source_dims;
        if self.stride == 0 || self.channels == 0 {
            return Err(Error::format("RNFM", "stride and channels must be positive"));
        }
        if self.grid_h != h.div_ceil(self.stride) || self.grid_w != w.div_ceil(self.stride) {
            return Err(Error::format(
                "RNFM",
                format!(
                    "grid {}x{} does not match source {}x{} at stride {}",
                    self.grid_h, self.grid_w, h, w, self.stride
                ),
            ));
        }
        if self.data.len() != self.cells() * self.channels {
            return Err(Error::format("RNFM", "data length does not match header"));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("RNFM", "non-finite feature value"));
        }
        Ok(())
    }

    /// Vertical concatenation of maps with equal width and channel count. Cell indices
    /// of the result enumerate the inputs in order.
    pub fn stack(maps: &[FeatureMap]) -> Result<FeatureMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::input("cannot stack zero feature maps"))?;
        let mut out = first.clone();
        for m in &maps[1..] {
            if m.grid_w != first.grid_w || m.channels != first.channels || m.stride != first.stride {
                return Err(Error::input(
                    "stacked feature maps must share width, channels and stride",
                ));
            }
            out.grid_h += m.grid_h;
            out.data.extend_from_slice(&m.data);
        }
        if maps.len() > 1 {
            out.source_dims.0 = out.grid_h * out.stride;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_BYTES + self.data.len() * 4);
        buf.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.grid_h as u32,
            self.grid_w as u32,
            self.channels as u32,
            self.stride as u32,
            self.source_dims.0 as u32,
            self.source_dims.1 as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::format(
                "RNFM",
                format!("file truncated: header needs {HEADER_BYTES} bytes, got {}", bytes.len()),
            ));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format("RNFM", "bad magic"));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if u(0) != VERSION as usize {
            return Err(Error::format("RNFM", format!("unsupported version {}", u(0))));
        }
        let (grid_h, grid_w, channels, stride, src_h, src_w) = (u(1), u(2), u(3), u(4), u(5), u(6));
        let values = grid_h
            .checked_mul(grid_w)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::format("RNFM", "header dimensions overflow"))?;
        let expected = HEADER_BYTES + values * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                "RNFM",
                format!("expected {expected} bytes, got {}", bytes.len()),
            ));
        }
        let data = bytes[HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let map = FeatureMap {
            grid_h,
            grid_w,
            channels,
            stride,
            source_dims: (src_h, src_w),
            data,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Values rounded through `f32`, i.e. what a save/load cycle returns.
    pub fn quantized_f32(&self) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        m
    }
}

impl DepthMap {
    /// Single-channel, stride-1 feature map; pixels without depth are stored as `-1`.
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap {
            grid_h: self.height,
            grid_w: self.width,
            channels: 1,
            stride: 1,
            source_dims: (self.height, self.width),
            data: self.data.iter().map(|d| d.unwrap_or(-1.0)).collect(),
        }
    }

    pub fn from_feature_map(map: &FeatureMap) -> Result<Self> {
        if map.channels != 1 || map.stride != 1 {
            return Err(Error::format("RNFM", "depth maps are single-channel at stride 1"));
        }
        Ok(DepthMap {
            width: map.grid_w,
            height: map.grid_h,
            data: map.data.iter().map(|&d| (d >= 0.0).then_some(d)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> FeatureMap {
        let mut m = FeatureMap::zeros(2, 3, 4, 8, (16, 20));
        for (i, v) in m.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        m.quantized_f32()
    }

    #[test]
    fn roundtrip() {
        let m = sample_map();
        assert_eq!(FeatureMap::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn truncated_file_names_expected_size() {
        let bytes = sample_map().to_bytes();
        let err = FeatureMap::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(
            err.to_string().contains(&format!("expected {} bytes", bytes.len())),
            "{err}"
        );
        assert_eq!(err.category(), "format");
    }

    #[test]
    fn header_checks() {
        let mut bytes = sample_map().to_bytes();
        bytes[4] = 2;
        assert!(FeatureMap::from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("version"));
        let mut m = sample_map();
        m.source_dims = (40, 20);
        assert!(FeatureMap::from_bytes(&m.to_bytes()).is_err());
    }

    #[test]
    fn depth_map_roundtrip() {
        let d = DepthMap {
            width: 2,
            height: 2,
            data: vec![Some(1.5), None, Some(0.0), Some(3.25)],
        };
        let m = FeatureMap::from_bytes(&d.to_feature_map().to_bytes()).unwrap();
        assert_eq!(DepthMap::from_feature_map(&m).unwrap(), d);
    }
}
