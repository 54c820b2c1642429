//! Volume rendering, pseudo-depth and the per-ray backward pass.

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Ray};
use crate::error::{Error, Result};
use crate::grid::{Trilinear, VoxelGrid};
use crate::image::{DepthMap, ImageRgb, Rgb};
use crate::par;

/// Transmittance below which the color integral stops marching.
const TRANSMITTANCE_CUTOFF: f64 = 1e-8;

/// Rays handed to one gradient buffer; a fixed split keeps reductions deterministic
/// regardless of thread count.
const GRAD_CHUNKS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    /// World units between consecutive samples.
    pub step_size: f64,
    pub max_samples: usize,
    /// Accumulated optical depth at which a ray is considered to hit the surface.
    pub sigma_z: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            step_size: 1.0 / 32.0,
            max_samples: 512,
            sigma_z: 0.8,
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.sigma_z > 0.0) || self.max_samples == 0 {
            return Err(Error::input(
                "sample spec needs step_size > 0, sigma_z > 0 and max_samples >= 1",
            ));
        }
        Ok(())
    }
}

/// Sample distances `t_i = t_enter + i * step` inside the grid box.
pub fn sample_ts(grid: &VoxelGrid, ray: &Ray, spec: &SampleSpec) -> Vec<f64> {
    match grid.ray_bounds(&ray.origin, &ray.direction) {
        None => Vec::new(),
        Some((t0, t1)) => {
            let n = (((t1 - t0) / spec.step_size).ceil() as usize).min(spec.max_samples);
            (0..n).map(|i| t0 + i as f64 * spec.step_size).collect()
        }
    }
}

/// Samples lie in `[t_enter, t_exit)` by construction, so points that rounding puts
/// a hair outside the box are pulled back onto it.
#[inline]
fn stencil(grid: &VoxelGrid, ray: &Ray, t: f64) -> Option<Trilinear> {
    grid.trilinear(&grid.clamp_point(&ray.at(t)))
}

/// `C(r) = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i`.
pub fn render_ray(grid: &VoxelGrid, ray: &Ray, spec: &SampleSpec) -> Rgb {
    let Some((t0, t1)) = grid.ray_bounds(&ray.origin, &ray.direction) else {
        return Rgb::zeros();
    };
    let n = (((t1 - t0) / spec.step_size).ceil() as usize).min(spec.max_samples);
    let delta = spec.step_size;
    let mut transmittance = 1.0;
    let mut out = Rgb::zeros();
    for i in 0..n {
        let Some(st) = stencil(grid, ray, t0 + i as f64 * delta) else {
            continue;
        };
        let (sigma, c) = grid.eval(&st);
        if sigma <= 0.0 {
            continue;
        }
        let att = (-sigma * delta).exp();
        out += transmittance * (1.0 - att) * c;
        transmittance *= att;
        if transmittance < TRANSMITTANCE_CUTOFF {
            break;
        }
    }
    out
}

/// Sum of compositing weights, i.e. the ray's opacity.
pub fn ray_opacity(grid: &VoxelGrid, ray: &Ray, spec: &SampleSpec) -> f64 {
    let mut optical = 0.0;
    for t in sample_ts(grid, ray, spec) {
        if let Some(st) = stencil(grid, ray, t) {
            optical += grid.eval_density(&st) * spec.step_size;
        }
    }
    1.0 - (-optical).exp()
}

/// `l(r) = min { t_i | sum_{j<i} sigma_j delta_j >= sigma_z }`.
pub fn ray_depth(grid: &VoxelGrid, ray: &Ray, spec: &SampleSpec) -> Option<f64> {
    let mut optical = 0.0;
    for t in sample_ts(grid, ray, spec) {
        if optical >= spec.sigma_z {
            return Some(t);
        }
        if let Some(st) = stencil(grid, ray, t) {
            optical += grid.eval_density(&st) * spec.step_size;
        }
    }
    None
}

pub fn render_view(grid: &VoxelGrid, camera: &Camera, spec: &SampleSpec) -> ImageRgb {
    let rows = par::map_range(camera.height, |y| {
        (0..camera.width)
            .map(|x| render_ray(grid, &camera.pixel_ray(x, y, None), spec))
            .collect::<Vec<_>>()
    });
    ImageRgb {
        width: camera.width,
        height: camera.height,
        data: rows.into_iter().flatten().collect(),
    }
}

pub fn render_depth(grid: &VoxelGrid, camera: &Camera, spec: &SampleSpec) -> DepthMap {
    let rows = par::map_range(camera.height, |y| {
        (0..camera.width)
            .map(|x| ray_depth(grid, &camera.pixel_ray(x, y, None), spec))
            .collect::<Vec<_>>()
    });
    DepthMap {
        width: camera.width,
        height: camera.height,
        data: rows.into_iter().flatten().collect(),
    }
}

/// Gradient buffers matching a grid's parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrad {
    pub density: Vec<f64>,
    pub color: Vec<Rgb>,
}

impl FieldGrad {
    pub fn zeros(voxels: usize) -> Self {
        Self {
            density: vec![0.0; voxels],
            color: vec![Rgb::zeros(); voxels],
        }
    }

    pub fn for_grid(grid: &VoxelGrid) -> Self {
        Self::zeros(grid.voxel_count())
    }

    pub fn add_scaled(&mut self, other: &FieldGrad, scale: f64) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += scale * b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.density
            .iter()
            .map(|v| v.abs())
            .chain(self.color.iter().map(|c| c.abs().max()))
            .fold(0.0, f64::max)
    }
}

/// Renders `ray` and accumulates `d_loss/d_params` given `d_loss/d_color` into `grad`.
/// Density gradients are only accumulated when `with_density` is set.
/// Returns the rendered color.
pub fn backprop_ray(
    grid: &VoxelGrid,
    ray: &Ray,
    spec: &SampleSpec,
    d_color: &Rgb,
    grad: &mut FieldGrad,
    with_density: bool,
) -> Rgb {
    let delta = spec.step_size;
    let mut samples: Vec<(Trilinear, f64, Rgb)> = Vec::new();
    let mut total = Rgb::zeros();
    let mut transmittance = 1.0;
    for t in sample_ts(grid, ray, spec) {
        let Some(st) = stencil(grid, ray, t) else {
            continue;
        };
        let (sigma, c) = grid.eval(&st);
        if sigma <= 0.0 && !with_density {
            continue;
        }
        let att = (-sigma * delta).exp();
        total += transmittance * (1.0 - att) * c;
        transmittance *= att;
        samples.push((st, sigma, c));
        if transmittance < TRANSMITTANCE_CUTOFF {
            break;
        }
    }

    let mut transmittance = 1.0;
    let mut acc = Rgb::zeros();
    for (st, sigma, c) in &samples {
        let att = (-sigma * delta).exp();
        let w = transmittance * (1.0 - att);
        let t_next = transmittance * att;
        acc += w * c;
        let dc = w * d_color;
        let dsigma = if with_density {
            delta * (t_next * c - (total - acc)).dot(d_color)
        } else {
            0.0
        };
        for k in 0..8 {
            let wk = st.weight[k];
            if wk == 0.0 {
                continue;
            }
            let idx = st.index[k];
            grad.color[idx] += wk * dc;
            if with_density {
                grad.density[idx] += wk * dsigma;
            }
        }
        transmittance = t_next;
    }
    total
}

/// Backpropagates many rays with cached color gradients. Gradients are accumulated in
/// a fixed number of chunk buffers and reduced in chunk order.
pub fn backprop_rays(grid: &VoxelGrid, rays: &[(Ray, Rgb)], spec: &SampleSpec, with_density: bool) -> FieldGrad {
    let n = grid.voxel_count();
    if rays.is_empty() {
        return FieldGrad::zeros(n);
    }
    let chunk = rays.len().div_ceil(GRAD_CHUNKS);
    let chunks: Vec<&[(Ray, Rgb)]> = rays.chunks(chunk).collect();
    let partial = par::map_collect(&chunks, |part| {
        let mut g = FieldGrad::zeros(n);
        for (ray, dc) in part.iter() {
            if dc.iter().all(|v| *v == 0.0) {
                continue;
            }
            backprop_ray(grid, ray, spec, dc, &mut g, with_density);
        }
        g
    });
    let mut out = FieldGrad::zeros(n);
    for g in &partial {
        out.add_scaled(g, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Vec3;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn slab_grid() -> VoxelGrid {
        // 1 x 1 x 4 column along z, one voxel per unit.
        VoxelGrid::new([1, 1, 4], Vec3::new(-0.5, -0.5, 0.0), Vec3::new(0.5, 0.5, 4.0)).unwrap()
    }

    #[test]
    fn empty_grid_renders_black_without_depth() {
        let g = slab_grid();
        let ray = Ray::new(Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 1.0));
        let spec = SampleSpec::default();
        assert_eq!(render_ray(&g, &ray, &spec), Rgb::zeros());
        assert_eq!(ray_depth(&g, &ray, &spec), None);
    }

    #[test]
    fn single_segment_closed_form() {
        // One sample of density ln 2 over a unit step: half the light is absorbed.
        let mut g = VoxelGrid::new([1, 1, 1], Vec3::repeat(-0.5), Vec3::repeat(0.5)).unwrap();
        g.density[0] = std::f64::consts::LN_2;
        g.color[0] = Rgb::new(1.0, 0.0, 0.0);
        let spec = SampleSpec {
            step_size: 1.0,
            max_samples: 1,
            sigma_z: 0.8,
        };
        let ray = Ray::new(Vec3::new(0.0, 0.0, -2.0), Vec3::new(0.0, 0.0, 1.0));
        assert_relative_eq!(render_ray(&g, &ray, &spec), Rgb::new(0.5, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn depth_threshold_example() {
        // Samples at t = 1, 2, 3, 4 each carrying optical depth 0.4.
        let mut g = slab_grid();
        g.density.iter_mut().for_each(|d| *d = 0.4);
        let spec = SampleSpec {
            step_size: 1.0,
            max_samples: 16,
            sigma_z: 1.0,
        };
        let ray = Ray::new(Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(sample_ts(&g, &ray, &spec), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ray_depth(&g, &ray, &spec), Some(4.0));
    }

    #[test]
    fn view_matches_single_ray() {
        let mut g = slab_grid();
        g.density.iter_mut().for_each(|d| *d = 1.0);
        g.color.iter_mut().for_each(|c| *c = Rgb::new(0.2, 0.4, 0.6));
        let cam = Camera::new(1, 1, 1.0, 1.0, 0.5, 0.5, Matrix3::identity(), Vec3::new(0.0, 0.0, -1.0)).unwrap();
        let spec = SampleSpec::default();
        let img = render_view(&g, &cam, &spec);
        let ray = cam.generate_ray(0.0, 0.0).unwrap();
        assert_eq!(img.data[0], render_ray(&g, &ray, &spec));
        assert_eq!(render_depth(&g, &cam, &spec).data[0], ray_depth(&g, &ray, &spec));
    }

    #[test]
    fn backprop_returns_forward_color() {
        let mut g = slab_grid();
        g.density = vec![0.3, 1.2, 0.0, 2.0];
        g.color = vec![Rgb::new(0.1, 0.2, 0.3); 4];
        let spec = SampleSpec {
            step_size: 0.25,
            ..Default::default()
        };
        let ray = Ray::new(Vec3::new(0.1, 0.0, -1.0), Vec3::new(0.0, 0.05, 1.0));
        let mut grad = FieldGrad::for_grid(&g);
        let c = backprop_ray(&g, &ray, &spec, &Rgb::new(1.0, 0.0, 0.0), &mut grad, true);
        assert_relative_eq!(c, render_ray(&g, &ray, &spec), epsilon = 1e-12);
    }
}
