//! Reference ray registration.
//!
//! Pixels of every stylized reference view are lifted to 3D through the pseudo-depth
//! of the photorealistic field and bucketed by a voxel quantizer. Any other ray whose
//! own surface point lands in an occupied bucket is matched to the nearest stored
//! point among reference rays with a similar direction, and inherits its style color.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Ray, Vec3};
use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::image::{ImageRgb, MaskImage, Rgb};
use crate::par;
use crate::render::{ray_depth, SampleSpec};

pub type VoxelIndex = [u32; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictConfig {
    /// Buckets per axis.
    pub resolution: usize,
    /// Maximum rays stored per bucket.
    pub capacity: usize,
    /// Minimum cosine between the directions of a matched pair.
    pub cos_threshold: f64,
    /// Quantizer box; `None` uses the grid box.
    pub bbox: Option<[[f64; 3]; 2]>,
    /// Square erosion radius applied to reference foreground masks.
    pub mask_erosion_radius: usize,
}

impl Default for DictConfig {
    fn default() -> Self {
        Self {
            resolution: 256,
            capacity: 8,
            cos_threshold: 0.6,
            bbox: None,
            mask_erosion_radius: 2,
        }
    }
}

impl DictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.capacity == 0 {
            return Err(Error::input("dictionary resolution and capacity must be >= 1"));
        }
        if !(-1.0..=1.0).contains(&self.cos_threshold) {
            return Err(Error::input("cos_threshold must lie in [-1, 1]"));
        }
        if let Some([lo, hi]) = self.bbox {
            if (0..3).any(|a| !(lo[a] < hi[a])) {
                return Err(Error::input("dictionary bbox must satisfy min < max"));
            }
        }
        Ok(())
    }
}

/// Uniform voxel quantizer over a box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantizer {
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub resolution: usize,
}

impl Quantizer {
    pub fn new(config: &DictConfig, grid: &VoxelGrid) -> Self {
        let (bbox_min, bbox_max) = match config.bbox {
            Some([lo, hi]) => (Vec3::from(lo), Vec3::from(hi)),
            None => (grid.bbox_min, grid.bbox_max),
        };
        Self {
            bbox_min,
            bbox_max,
            resolution: config.resolution,
        }
    }

    /// `floor((p - min) / (max - min) * R)` clamped to `[0, R - 1]`; `None` outside
    /// the box.
    pub fn quantize(&self, p: &Vec3) -> Option<VoxelIndex> {
        let mut out = [0u32; 3];
        for a in 0..3 {
            if !(p[a] >= self.bbox_min[a] && p[a] <= self.bbox_max[a]) {
                return None;
            }
            let u = (p[a] - self.bbox_min[a]) / (self.bbox_max[a] - self.bbox_min[a]);
            let i = (u * self.resolution as f64).floor() as i64;
            out[a] = i.clamp(0, self.resolution as i64 - 1) as u32;
        }
        Some(out)
    }
}

pub fn quantize(point: &Vec3, config: &DictConfig, grid: &VoxelGrid) -> Option<VoxelIndex> {
    Quantizer::new(config, grid).quantize(point)
}

/// A stylized reference view.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleReference {
    pub camera: Camera,
    pub style: ImageRgb,
    /// Foreground mask, already eroded.
    pub mask: Option<MaskImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DictEntry {
    pub ray: Ray,
    pub color: Rgb,
    pub point: Vec3,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictStats {
    pub reference_pixels: usize,
    pub masked_out: usize,
    pub no_depth: usize,
    pub outside_bbox: usize,
    pub over_capacity: usize,
    pub inserted: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDictionary {
    pub config: DictConfig,
    pub quantizer: Quantizer,
    pub entries: HashMap<VoxelIndex, Vec<DictEntry>>,
    pub reference_views: Vec<u32>,
    pub stats: DictStats,
}

impl ReferenceDictionary {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ray_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn bucket(&self, index: &VoxelIndex) -> &[DictEntry] {
        self.entries.get(index).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Builds the dictionary from every reference pixel with a valid pseudo-depth. Rays
/// are inserted in scanline order, reference by reference; a full bucket keeps the
/// rays that arrived first. Reference `k` gets view id `k`.
pub fn build_dictionary(
    grid: &VoxelGrid,
    refs: &[StyleReference],
    spec: &SampleSpec,
    config: &DictConfig,
) -> Result<ReferenceDictionary> {
    config.validate()?;
    spec.validate()?;
    let quantizer = Quantizer::new(config, grid);
    let mut dict = ReferenceDictionary {
        config: config.clone(),
        quantizer,
        entries: HashMap::new(),
        reference_views: (0..refs.len() as u32).collect(),
        stats: DictStats::default(),
    };
    for (view, r) in refs.iter().enumerate() {
        let cam = &r.camera;
        if (r.style.width, r.style.height) != (cam.width, cam.height) {
            return Err(Error::input(format!(
                "reference {view}: style image is {}x{} but camera is {}x{}",
                r.style.width, r.style.height, cam.width, cam.height
            )));
        }
        if let Some(m) = &r.mask {
            if (m.width, m.height) != (cam.width, cam.height) {
                return Err(Error::input(format!("reference {view}: mask size mismatch")));
            }
        }
        let view = view as u32;
        let rows = par::map_range(cam.height, |y| {
            (0..cam.width)
                .map(|x| {
                    let ray = cam.pixel_ray(x, y, Some(view));
                    let depth = ray_depth(grid, &ray, spec);
                    (ray, depth)
                })
                .collect::<Vec<_>>()
        });
        for (ray, depth) in rows.into_iter().flatten() {
            dict.stats.reference_pixels += 1;
            let (x, y) = ray.pixel.map(|(x, y)| (x as usize, y as usize)).unwrap();
            if r.mask.as_ref().is_some_and(|m| !m.get(x, y)) {
                dict.stats.masked_out += 1;
                continue;
            }
            let Some(depth) = depth else {
                dict.stats.no_depth += 1;
                continue;
            };
            let point = ray.at(depth);
            let Some(index) = quantizer.quantize(&point) else {
                dict.stats.outside_bbox += 1;
                continue;
            };
            let bucket = dict.entries.entry(index).or_default();
            if bucket.len() >= config.capacity {
                dict.stats.over_capacity += 1;
                continue;
            }
            bucket.push(DictEntry {
                ray,
                color: r.style.get(x, y),
                point,
            });
            dict.stats.inserted += 1;
        }
    }
    if dict.is_empty() {
        log::warn!("reference dictionary is empty: no reference pixel has a valid depth");
    }
    Ok(dict)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registration<'a> {
    pub matched: &'a DictEntry,
    pub voxel: VoxelIndex,
    pub distance: f64,
    pub cosine: f64,
}

/// Matches `ray` against the dictionary bucket holding its own surface point.
pub fn register_ray<'a>(
    dict: &'a ReferenceDictionary,
    grid: &VoxelGrid,
    ray: &Ray,
    spec: &SampleSpec,
) -> Option<Registration<'a>> {
    let depth = ray_depth(grid, ray, spec)?;
    register_point(dict, ray, &ray.at(depth))
}

/// Registration with a precomputed surface point. Ties keep the earliest stored ray.
pub fn register_point<'a>(dict: &'a ReferenceDictionary, ray: &Ray, point: &Vec3) -> Option<Registration<'a>> {
    let voxel = dict.quantizer.quantize(point)?;
    let mut best: Option<Registration<'a>> = None;
    for entry in dict.bucket(&voxel) {
        let cosine = entry.ray.direction.dot(&ray.direction);
        if !(cosine > dict.config.cos_threshold) {
            continue;
        }
        let distance = (entry.point - point).norm();
        if best.as_ref().is_none_or(|b| distance < b.distance) {
            best = Some(Registration {
                matched: entry,
                voxel,
                distance,
                cosine,
            });
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoRay {
    /// Training or reference ray, tagged with its view id and pixel.
    pub ray: Ray,
    /// Style color inherited from the matched reference ray.
    pub color: Rgb,
    /// Reference view the matched ray came from.
    pub source: u32,
    pub voxel: VoxelIndex,
    pub distance: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoRaySet {
    pub items: Vec<PseudoRay>,
    /// Item indices per originating view.
    pub by_view: BTreeMap<u32, Vec<usize>>,
    pub reference_views: Vec<u32>,
    /// Rays examined per view, registered or not.
    pub queried: BTreeMap<u32, usize>,
    /// Rays per view with a valid pseudo-depth.
    pub surface: BTreeMap<u32, usize>,
}

impl PseudoRaySet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn is_reference(&self, view: u32) -> bool {
        self.reference_views.contains(&view)
    }

    /// Indices of items whose ray belongs to a reference camera.
    pub fn reference_items(&self) -> Vec<usize> {
        self.by_view
            .iter()
            .filter(|(v, _)| self.is_reference(**v))
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect()
    }

    /// Indices of items registered from non-reference views.
    pub fn other_items(&self) -> Vec<usize> {
        self.by_view
            .iter()
            .filter(|(v, _)| !self.is_reference(**v))
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect()
    }

    /// Registered share of the view's rays that reach a surface.
    pub fn registration_rate(&self, view: u32) -> f64 {
        let hits = self.by_view.get(&view).map_or(0, Vec::len);
        match self.surface.get(&view) {
            Some(&n) if n > 0 => hits as f64 / n as f64,
            _ => 0.0,
        }
    }

    /// Per-pixel registration mask for one view.
    pub fn mask_for(&self, view: u32, width: usize, height: usize) -> MaskImage {
        let mut m = MaskImage::new(width, height, false);
        for &i in self.by_view.get(&view).into_iter().flatten() {
            if let Some((x, y)) = self.items[i].ray.pixel {
                m.data[y as usize * width + x as usize] = true;
            }
        }
        m
    }

    /// Coverage dump: `view_id,px,py,vx,vy,vz,distance,cosine`.
    pub fn write_debug_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "view_id,px,py,vx,vy,vz,distance,cosine")?;
        for item in &self.items {
            let (px, py) = item.ray.pixel.unwrap_or((0, 0));
            writeln!(
                w,
                "{},{},{},{},{},{},{:.9},{:.9}",
                item.ray.view_id.unwrap_or(0),
                px,
                py,
                item.voxel[0],
                item.voxel[1],
                item.voxel[2],
                item.distance,
                item.cosine
            )?;
        }
        Ok(())
    }
}

/// Registers every pixel ray of every `(view_id, camera)` pair.
pub fn collect_pseudo_rays(
    dict: &ReferenceDictionary,
    grid: &VoxelGrid,
    views: &[(u32, &Camera)],
    spec: &SampleSpec,
) -> PseudoRaySet {
    let mut set = PseudoRaySet {
        reference_views: dict.reference_views.clone(),
        ..Default::default()
    };
    for &(view, cam) in views {
        let rows = par::map_range(cam.height, |y| {
            let mut surface = 0;
            let items = (0..cam.width)
                .filter_map(|x| {
                    let ray = cam.pixel_ray(x, y, Some(view));
                    let depth = ray_depth(grid, &ray, spec)?;
                    surface += 1;
                    register_point(dict, &ray, &ray.at(depth)).map(|reg| PseudoRay {
                        ray,
                        color: reg.matched.color,
                        source: reg.matched.ray.view_id.unwrap_or(0),
                        voxel: reg.voxel,
                        distance: reg.distance,
                        cosine: reg.cosine,
                    })
                })
                .collect::<Vec<_>>();
            (surface, items)
        });
        *set.queried.entry(view).or_default() += cam.pixel_count();
        let surface = set.surface.entry(view).or_default();
        for (n, _) in &rows {
            *surface += n;
        }
        for item in rows.into_iter().flat_map(|(_, items)| items) {
            set.by_view.entry(view).or_default().push(set.items.len());
            set.items.push(item);
        }
    }
    set
}

/// Binary erosion with a `(2r + 1)^2` square window clipped to the image.
pub fn erode_mask(mask: &MaskImage, radius: usize) -> MaskImage {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let mut rows = MaskImage::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows.data[y * w + x] = (lo..=hi).all(|sx| mask.get(sx, y));
        }
    }
    let mut out = MaskImage::new(w, h, false);
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out.data[y * w + x] = (lo..=hi).all(|sy| rows.get(x, sy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cfg(r: usize) -> DictConfig {
        DictConfig {
            resolution: r,
            bbox: Some([[0.0; 3], [1.0; 3]]),
            ..Default::default()
        }
    }

    fn unit_grid() -> VoxelGrid {
        VoxelGrid::new([2, 2, 2], Vec3::zeros(), Vec3::repeat(1.0)).unwrap()
    }

    #[test]
    fn quantizer_examples() {
        let g = unit_grid();
        assert_eq!(quantize(&Vec3::zeros(), &unit_cfg(256), &g), Some([0, 0, 0]));
        assert_eq!(quantize(&Vec3::repeat(0.5), &unit_cfg(4), &g), Some([2, 2, 2]));
        assert_eq!(quantize(&Vec3::repeat(1.0), &unit_cfg(4), &g), Some([3, 3, 3]));
        assert_eq!(quantize(&Vec3::new(1.01, 0.5, 0.5), &unit_cfg(4), &g), None);
    }

    #[test]
    fn erosion_examples() {
        let mut m = MaskImage::new(5, 5, false);
        m.data[12] = true;
        assert_eq!(erode_mask(&m, 0), m);
        assert_eq!(erode_mask(&m, 1).count(), 0);
        let full = MaskImage::new(4, 3, true);
        assert_eq!(erode_mask(&full, 2), full);
    }

    #[test]
    fn config_validation() {
        assert!(DictConfig {
            capacity: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DictConfig {
            cos_threshold: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        DictConfig::default().validate().unwrap();
    }
}
