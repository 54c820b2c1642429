//! Brute-force reference implementations and shared fixtures for the integration
//! tests. Nothing here calls into the library code it is checking.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refnpr_core::registration::{DictConfig, DictEntry, ReferenceDictionary, StyleReference};
use refnpr_core::tcm::FeatureMap;
use refnpr_core::{Camera, Ray, Rgb, SampleSpec, Vec3, VoxelGrid};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut impl Rng, res: [usize; 3], max_density: f64) -> VoxelGrid {
    let lo = Vec3::new(
        rng.random_range(-1.5..-0.5),
        rng.random_range(-1.5..-0.5),
        rng.random_range(-1.5..-0.5),
    );
    let hi = Vec3::new(
        rng.random_range(0.5..1.5),
        rng.random_range(0.5..1.5),
        rng.random_range(0.5..1.5),
    );
    let mut g = VoxelGrid::new(res, lo, hi).unwrap();
    for d in &mut g.density {
        *d = if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..max_density)
        };
    }
    for c in &mut g.color {
        *c = Rgb::new(rng.random(), rng.random(), rng.random());
    }
    g
}

pub fn random_ray(rng: &mut impl Rng) -> Ray {
    let dir = loop {
        let d = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if d.norm() > 0.1 {
            break d;
        }
    };
    let origin = -dir.normalize() * rng.random_range(2.0..4.0)
        + Vec3::new(
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.8..0.8),
        );
    Ray::new(origin, dir)
}

/// Camera on a sphere around the origin, looking roughly at it.
pub fn random_camera(rng: &mut impl Rng, size: usize) -> Camera {
    loop {
        let eye = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if eye.norm() < 0.2 {
            continue;
        }
        let eye = eye.normalize() * rng.random_range(2.5..4.0);
        let target = Vec3::new(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        );
        if let Ok(c) = Camera::look_at(size, size, rng.random_range(0.5..0.9), eye, target, Vec3::y()) {
            return c;
        }
    }
}

/// Entry and exit distances of the ray with the box, solving each plane pair directly.
pub fn oracle_bounds(grid: &VoxelGrid, ray: &Ray) -> Option<(f64, f64)> {
    let mut enter = 0.0f64;
    let mut exit = f64::INFINITY;
    for a in 0..3 {
        let (o, d) = (ray.origin[a], ray.direction[a]);
        if d.abs() < 1e-12 {
            if o < grid.bbox_min[a] || o > grid.bbox_max[a] {
                return None;
            }
            continue;
        }
        let p = (grid.bbox_min[a] - o) / d;
        let q = (grid.bbox_max[a] - o) / d;
        enter = enter.max(p.min(q));
        exit = exit.min(p.max(q));
    }
    (enter < exit).then_some((enter, exit))
}

/// Field value at `p`: continuous voxel coordinates clamped to the outermost centers,
/// then interpolated along each axis in turn.
pub fn oracle_field(grid: &VoxelGrid, p: &Vec3) -> Option<(f64, Rgb)> {
    for a in 0..3 {
        if p[a] < grid.bbox_min[a] || p[a] > grid.bbox_max[a] {
            return None;
        }
    }
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let n = grid.resolution[a];
        let size = (grid.bbox_max[a] - grid.bbox_min[a]) / n as f64;
        let u = ((p[a] - grid.bbox_min[a]) / size - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n.saturating_sub(2));
        base[a] = i;
        frac[a] = if n == 1 { 0.0 } else { u - i as f64 };
    }
    let at = |x: usize, y: usize, z: usize| {
        let x = x.min(grid.resolution[0] - 1);
        let y = y.min(grid.resolution[1] - 1);
        let z = z.min(grid.resolution[2] - 1);
        let i = x + grid.resolution[0] * (y + grid.resolution[1] * z);
        (grid.density[i], grid.color[i])
    };
    let lerp = |a: (f64, Rgb), b: (f64, Rgb), t: f64| (a.0 * (1.0 - t) + b.0 * t, a.1 * (1.0 - t) + b.1 * t);
    let [x, y, z] = base;
    let [fx, fy, fz] = frac;
    let c00 = lerp(at(x, y, z), at(x + 1, y, z), fx);
    let c10 = lerp(at(x, y + 1, z), at(x + 1, y + 1, z), fx);
    let c01 = lerp(at(x, y, z + 1), at(x + 1, y, z + 1), fx);
    let c11 = lerp(at(x, y + 1, z + 1), at(x + 1, y + 1, z + 1), fx);
    let c0 = lerp(c00, c10, fy);
    let c1 = lerp(c01, c11, fy);
    Some(lerp(c0, c1, fz))
}

fn oracle_samples(grid: &VoxelGrid, ray: &Ray, spec: &SampleSpec) -> Vec<(f64, f64, Rgb)> {
    let Some((t0, t1)) = oracle_bounds(grid, ray) else {
        return Vec::new();
    };
    let mut n = 0usize;
    while (n as f64) * spec.step_size < t1 - t0 && n < spec.max_samples {
        n += 1;
    }
    (0..n)
        .map(|i| {
            let t = t0 + i as f64 * spec.step_size;
            let p = ray.origin + ray.direction * t;
            let inside = Vec3::new(
                p.x.max(grid.bbox_min.x).min(grid.bbox_max.x),
                p.y.max(grid.bbox_min.y).min(grid.bbox_max.y),
                p.z.max(grid.bbox_min.z).min(grid.bbox_max.z),
            );
            let (s, c) = oracle_field(grid, &inside).unwrap();
            (t, s, c)
        })
        .collect()
}

/// Color integral with every transmittance recomputed from scratch and no early exit.
pub fn oracle_render(grid: &VoxelGrid, ray: &Ray, spec: &SampleSpec) -> Rgb {
    let samples = oracle_samples(grid, ray, spec);
    let d = spec.step_size;
    let mut out = Rgb::zeros();
    for i in 0..samples.len() {
        let optical: f64 = samples[..i].iter().map(|s| s.1 * d).sum();
        let t = (-optical).exp();
        out += t * (1.0 - (-samples[i].1 * d).exp()) * samples[i].2;
    }
    out
}

/// Index and distance of the first sample whose preceding optical depth reaches
/// `sigma_z`.
pub fn oracle_depth(grid: &VoxelGrid, ray: &Ray, spec: &SampleSpec) -> Option<(usize, f64)> {
    let samples = oracle_samples(grid, ray, spec);
    (0..samples.len()).find_map(|i| {
        let optical: f64 = samples[..i].iter().map(|s| s.1 * spec.step_size).sum();
        (optical >= spec.sigma_z).then_some((i, samples[i].0))
    })
}

pub fn oracle_quantize(p: &Vec3, lo: &Vec3, hi: &Vec3, res: usize) -> Option<[u32; 3]> {
    let mut out = [0u32; 3];
    for a in 0..3 {
        if p[a] < lo[a] || p[a] > hi[a] {
            return None;
        }
        let cell = ((p[a] - lo[a]) / (hi[a] - lo[a]) * res as f64).floor() as i64;
        out[a] = cell.clamp(0, res as i64 - 1) as u32;
    }
    Some(out)
}

/// Dictionary contents rebuilt from scratch: bucket -> entries in insertion order.
pub fn oracle_dictionary(
    grid: &VoxelGrid,
    refs: &[StyleReference],
    spec: &SampleSpec,
    config: &DictConfig,
) -> HashMap<[u32; 3], Vec<(u32, (u32, u32), Rgb)>> {
    let (lo, hi) = match config.bbox {
        Some([a, b]) => (Vec3::from(a), Vec3::from(b)),
        None => (grid.bbox_min, grid.bbox_max),
    };
    let mut out: HashMap<[u32; 3], Vec<_>> = HashMap::new();
    for (v, r) in refs.iter().enumerate() {
        for y in 0..r.camera.height {
            for x in 0..r.camera.width {
                if r.mask.as_ref().is_some_and(|m| !m.get(x, y)) {
                    continue;
                }
                let ray = r.camera.pixel_ray(x, y, None);
                let Some((_, t)) = oracle_depth(grid, &ray, spec) else {
                    continue;
                };
                let Some(q) = oracle_quantize(&ray.at(t), &lo, &hi, config.resolution) else {
                    continue;
                };
                let bucket = out.entry(q).or_default();
                if bucket.len() < config.capacity {
                    bucket.push((v as u32, (x as u32, y as u32), r.style.get(x, y)));
                }
            }
        }
    }
    out
}

/// Exhaustive scan over every stored entry of every bucket.
pub fn oracle_register<'a>(dict: &'a ReferenceDictionary, ray: &Ray, point: &Vec3) -> Option<&'a DictEntry> {
    let q = dict.quantizer;
    let key = oracle_quantize(point, &q.bbox_min, &q.bbox_max, q.resolution)?;
    let mut all: Vec<&DictEntry> = dict.entries.values().flatten().collect();
    all.sort_by_key(|e| (e.ray.view_id, e.ray.pixel.map(|(x, y)| (y, x))));
    let mut best: Option<(&DictEntry, f64)> = None;
    for e in all {
        if oracle_quantize(&e.point, &q.bbox_min, &q.bbox_max, q.resolution) != Some(key) {
            continue;
        }
        let cos: f64 = (0..3).map(|a| e.ray.direction[a] * ray.direction[a]).sum();
        if cos <= dict.config.cos_threshold {
            continue;
        }
        let d = ((0..3).map(|a| (e.point[a] - point[a]).powi(2)).sum::<f64>()).sqrt();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((e, d));
        }
    }
    best.map(|(e, _)| e)
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        (1.0 - ab / (na * nb)).clamp(0.0, 2.0)
    }
}

/// Naive nearest reference cell per content cell, scanning rows then columns.
pub fn oracle_match(content: &FeatureMap, reference: &FeatureMap) -> Vec<(usize, f64)> {
    let c = content.channels;
    let cell = |m: &FeatureMap, i: usize| m.data[i * c..(i + 1) * c].to_vec();
    (0..content.grid_h * content.grid_w)
        .map(|i| {
            let a = cell(content, i);
            let mut best = (0usize, f64::INFINITY);
            for row in 0..reference.grid_h {
                for col in 0..reference.grid_w {
                    let j = row * reference.grid_w + col;
                    let d = cos_dist(&a, &cell(reference, j));
                    if d < best.1 {
                        best = (j, d);
                    }
                }
            }
            best
        })
        .collect()
}

pub fn random_feature_map(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    let mut m = FeatureMap::zeros(h, w, c, 1, (h, w));
    for v in &mut m.data {
        *v = rng.random_range(-1.0..1.0);
    }
    m
}
