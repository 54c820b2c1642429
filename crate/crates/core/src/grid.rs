//! Dense voxel radiance field with view-independent color.

use std::io::{Read, Write};
use std::path::Path;

use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::image::Rgb;

const GRID_MAGIC: &[u8; 4] = b"RNVG";
const GRID_VERSION: u32 = 1;
const GRID_HEADER_BYTES: usize = 4 + 4 + 3 * 4 + 6 * 4;

/// Density and RGB stored at voxel centers of a regular lattice spanning
/// `[bbox_min, bbox_max]`. Arrays are x-fastest: `i = x + nx * (y + ny * z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub resolution: [usize; 3],
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub density: Vec<f64>,
    pub color: Vec<Rgb>,
}

/// The eight lattice corners surrounding a point and their trilinear weights.
#[derive(Clone, Copy, Debug)]
pub struct Trilinear {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

impl VoxelGrid {
    pub fn new(resolution: [usize; 3], bbox_min: Vec3, bbox_max: Vec3) -> Result<Self> {
        Self::filled(resolution, bbox_min, bbox_max, 0.0, Rgb::zeros())
    }

    pub fn filled(resolution: [usize; 3], bbox_min: Vec3, bbox_max: Vec3, density: f64, color: Rgb) -> Result<Self> {
        let n = resolution.iter().product::<usize>();
        let grid = Self {
            resolution,
            bbox_min,
            bbox_max,
            density: vec![density; n],
            color: vec![color; n],
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.contains(&0) {
            return Err(Error::input("grid resolution must be positive"));
        }
        if (0..3).any(|a| !(self.bbox_min[a] < self.bbox_max[a])) {
            return Err(Error::input("grid bbox_min must be < bbox_max componentwise"));
        }
        let n = self.voxel_count();
        if self.density.len() != n || self.color.len() != n {
            return Err(Error::input(format!(
                "grid arrays must hold {n} voxels (density {}, color {})",
                self.density.len(),
                self.color.len()
            )));
        }
        if self.density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::input("grid densities must be finite and >= 0"));
        }
        if self.color.iter().any(|c| c.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(Error::input("grid colors must lie in [0, 1]"));
        }
        Ok(())
    }

    #[inline]
    pub fn voxel_count(&self) -> usize {
        self.resolution.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution[0] * (y + self.resolution[1] * z)
    }

    pub fn voxel_size(&self) -> Vec3 {
        (self.bbox_max - self.bbox_min).component_div(&Vec3::new(
            self.resolution[0] as f64,
            self.resolution[1] as f64,
            self.resolution[2] as f64,
        ))
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let vs = self.voxel_size();
        self.bbox_min + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5).component_mul(&vs)
    }

    #[inline]
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.bbox_min[a] && p[a] <= self.bbox_max[a])
    }

    /// `p` moved onto the box if it lies outside.
    pub fn clamp_point(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|a, _| p[a].clamp(self.bbox_min[a], self.bbox_max[a]))
    }

    /// Trilinear stencil for `p`, clamping to the outermost voxel centers inside the
    /// half-voxel border. `None` outside the bounding box.
    pub fn trilinear(&self, p: &Vec3) -> Option<Trilinear> {
        if !self.contains(p) {
            return None;
        }
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let extent = self.bbox_max[a] - self.bbox_min[a];
            let u = (p[a] - self.bbox_min[a]) / extent * n as f64 - 0.5;
            let f0 = u.floor();
            frac[a] = u - f0;
            let i0 = f0 as i64;
            lo[a] = i0.clamp(0, n as i64 - 1) as usize;
            hi[a] = (i0 + 1).clamp(0, n as i64 - 1) as usize;
        }
        let mut index = [0usize; 8];
        let mut weight = [0f64; 8];
        for corner in 0..8 {
            let pick = |a: usize| (corner >> a) & 1 == 1;
            let (x, wx) = if pick(0) {
                (hi[0], frac[0])
            } else {
                (lo[0], 1.0 - frac[0])
            };
            let (y, wy) = if pick(1) {
                (hi[1], frac[1])
            } else {
                (lo[1], 1.0 - frac[1])
            };
            let (z, wz) = if pick(2) {
                (hi[2], frac[2])
            } else {
                (lo[2], 1.0 - frac[2])
            };
            index[corner] = self.index(x, y, z);
            weight[corner] = wx * wy * wz;
        }
        Some(Trilinear { index, weight })
    }

    /// Interpolated `(sigma, rgb)`; zero outside the bounding box.
    pub fn sample_field(&self, p: &Vec3) -> (f64, Rgb) {
        match self.trilinear(p) {
            Some(t) => self.eval(&t),
            None => (0.0, Rgb::zeros()),
        }
    }

    #[inline]
    pub fn eval(&self, t: &Trilinear) -> (f64, Rgb) {
        let mut sigma = 0.0;
        let mut rgb = Rgb::zeros();
        for k in 0..8 {
            let w = t.weight[k];
            sigma += w * self.density[t.index[k]];
            rgb += w * self.color[t.index[k]];
        }
        (sigma, rgb)
    }

    #[inline]
    pub fn eval_density(&self, t: &Trilinear) -> f64 {
        (0..8).map(|k| t.weight[k] * self.density[t.index[k]]).sum()
    }

    /// Ray/box slab test. Returns `(t_enter, t_exit)` with `t_enter >= 0`.
    pub fn ray_bounds(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-12 {
                if origin[a] < self.bbox_min[a] || origin[a] > self.bbox_max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut ta = (self.bbox_min[a] - origin[a]) * inv;
            let mut tb = (self.bbox_max[a] - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 < t1).then_some((t0, t1))
    }

    /// Clamp densities to `>= 0` and colors to `[0, 1]`.
    pub fn project(&mut self) {
        for d in &mut self.density {
            *d = d.max(0.0);
        }
        for c in &mut self.color {
            for v in c.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(GRID_HEADER_BYTES + self.voxel_count() * 16);
        buf.extend_from_slice(GRID_MAGIC);
        buf.extend_from_slice(&GRID_VERSION.to_le_bytes());
        for &r in &self.resolution {
            buf.extend_from_slice(&(r as u32).to_le_bytes());
        }
        for v in self.bbox_min.iter().chain(self.bbox_max.iter()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for d in &self.density {
            buf.extend_from_slice(&(*d as f32).to_le_bytes());
        }
        for c in &self.color {
            for v in c.iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < GRID_HEADER_BYTES {
            return Err(Error::format(
                "RNVG",
                format!(
                    "file truncated: header needs {GRID_HEADER_BYTES} bytes, got {}",
                    bytes.len()
                ),
            ));
        }
        if &bytes[..4] != GRID_MAGIC {
            return Err(Error::format("RNVG", "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
        let version = u32_at(4);
        if version != GRID_VERSION {
            return Err(Error::format("RNVG", format!("unsupported version {version}")));
        }
        let resolution = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
        let bbox_min = Vec3::new(f32_at(20), f32_at(24), f32_at(28));
        let bbox_max = Vec3::new(f32_at(32), f32_at(36), f32_at(40));
        let n = resolution
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .ok_or_else(|| Error::format("RNVG", "resolution overflows"))?;
        let expected = GRID_HEADER_BYTES + n * 16;
        if bytes.len() != expected {
            return Err(Error::format(
                "RNVG",
                format!("expected {expected} bytes, got {}", bytes.len()),
            ));
        }
        let mut off = GRID_HEADER_BYTES;
        let mut density = Vec::with_capacity(n);
        for _ in 0..n {
            density.push(f32_at(off));
            off += 4;
        }
        let mut color = Vec::with_capacity(n);
        for _ in 0..n {
            color.push(Rgb::new(f32_at(off), f32_at(off + 4), f32_at(off + 8)));
            off += 12;
        }
        let grid = Self {
            resolution,
            bbox_min,
            bbox_max,
            density,
            color,
        };
        grid.validate().map_err(|e| Error::format("RNVG", e.to_string()))?;
        Ok(grid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copy with every value rounded to `f32`, i.e. what a save/load cycle returns.
    pub fn quantized_f32(&self) -> Self {
        let mut g = self.clone();
        g.bbox_min = g.bbox_min.map(|v| v as f32 as f64);
        g.bbox_max = g.bbox_max.map(|v| v as f32 as f64);
        g.density.iter_mut().for_each(|d| *d = *d as f32 as f64);
        g.color.iter_mut().for_each(|c| *c = c.map(|v| v as f32 as f64));
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ramp_grid() -> VoxelGrid {
        let mut g = VoxelGrid::new([4, 3, 2], Vec3::zeros(), Vec3::new(4.0, 3.0, 2.0)).unwrap();
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let i = g.index(x, y, z);
                    g.density[i] = (x + 10 * y + 100 * z) as f64;
                    g.color[i] = Rgb::new(x as f64 / 4.0, y as f64 / 3.0, z as f64 / 2.0);
                }
            }
        }
        g
    }

    #[test]
    fn voxel_center_returns_stored_value() {
        let g = ramp_grid();
        let (s, c) = g.sample_field(&g.voxel_center(2, 1, 1));
        assert_relative_eq!(s, g.density[g.index(2, 1, 1)], epsilon = 1e-12);
        assert_relative_eq!(c, g.color[g.index(2, 1, 1)], epsilon = 1e-12);
    }

    #[test]
    fn midpoint_is_mean_of_neighbors() {
        let g = ramp_grid();
        let p = 0.5 * (g.voxel_center(1, 1, 0) + g.voxel_center(2, 1, 0));
        let (s, c) = g.sample_field(&p);
        let (a, b) = (g.index(1, 1, 0), g.index(2, 1, 0));
        assert_relative_eq!(s, 0.5 * (g.density[a] + g.density[b]), epsilon = 1e-12);
        assert_relative_eq!(c, 0.5 * (g.color[a] + g.color[b]), epsilon = 1e-12);
    }

    #[test]
    fn outside_bbox_is_empty() {
        let g = ramp_grid();
        assert_eq!(g.sample_field(&Vec3::new(-0.1, 1.0, 1.0)), (0.0, Rgb::zeros()));
        assert_eq!(g.sample_field(&Vec3::new(1.0, 1.0, 2.5)), (0.0, Rgb::zeros()));
    }

    #[test]
    fn border_clamps_to_edge_voxel() {
        let g = ramp_grid();
        let (s, _) = g.sample_field(&Vec3::new(0.0, 0.5, 0.5));
        assert_relative_eq!(s, g.density[g.index(0, 0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn slab_test() {
        let g = ramp_grid();
        let (t0, t1) = g
            .ray_bounds(&Vec3::new(-1.0, 1.0, 1.0), &Vec3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_relative_eq!(t0, 1.0);
        assert_relative_eq!(t1, 5.0);
        assert!(g
            .ray_bounds(&Vec3::new(-1.0, 5.0, 1.0), &Vec3::new(1.0, 0.0, 0.0))
            .is_none());
        // Origin inside the box enters at t = 0.
        let (t0, _) = g
            .ray_bounds(&Vec3::new(1.0, 1.0, 1.0), &Vec3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(t0, 0.0);
    }

    #[test]
    fn rnvg_roundtrip_and_errors() {
        let g = ramp_grid().quantized_f32();
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..4], b"RNVG");
        assert_eq!(VoxelGrid::from_bytes(&bytes).unwrap(), g);

        let err = VoxelGrid::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains(&format!("expected {} bytes", bytes.len())));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(VoxelGrid::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 7;
        assert!(VoxelGrid::from_bytes(&bad).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn validate_rejects_bad_grids() {
        assert!(VoxelGrid::new([0, 1, 1], Vec3::zeros(), Vec3::repeat(1.0)).is_err());
        assert!(VoxelGrid::new([1, 1, 1], Vec3::repeat(1.0), Vec3::repeat(1.0)).is_err());
        let mut g = ramp_grid();
        g.density[0] = -1.0;
        assert!(g.validate().is_err());
    }
}
