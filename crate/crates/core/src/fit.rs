//! Fitting the photorealistic field to posed images.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Ray;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::image::Rgb;
use crate::optim::{AdamParams, GridAdam};
use crate::par;
use crate::render::{backprop_rays, render_ray, FieldGrad, SampleSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_rays: usize,
    /// Adam step size for colors.
    pub learning_rate: f64,
    /// Adam step size for densities (densities live on a much larger scale).
    pub density_learning_rate: f64,
    pub optimize_density: bool,
    /// Steps over which both step sizes ramp up linearly from zero.
    pub warmup_steps: usize,
    /// Step-size multiplier reached at the last step, decaying exponentially.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_rays: 4096,
            learning_rate: 0.05,
            density_learning_rate: 2.0,
            optimize_density: true,
            warmup_steps: 20,
            final_lr_fraction: 0.1,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_rays == 0 {
            return Err(Error::input("fit needs epochs >= 1 and batch_rays >= 1"));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) || !positive(self.density_learning_rate) {
            return Err(Error::input("fit learning rates must be positive and finite"));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::input("final_lr_fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

/// `sum_r |C(r) - target(r)|^2`.
pub fn photometric_loss(grid: &VoxelGrid, rays: &[Ray], targets: &[Rgb], spec: &SampleSpec) -> Result<f64> {
    check_batch(rays, targets)?;
    let errs = par::map_range(rays.len(), |i| {
        (render_ray(grid, &rays[i], spec) - targets[i]).norm_squared()
    });
    Ok(errs.iter().sum())
}

/// Loss together with its analytic gradient; density gradients only when requested.
pub fn photometric_loss_grad(
    grid: &VoxelGrid,
    rays: &[Ray],
    targets: &[Rgb],
    spec: &SampleSpec,
    with_density: bool,
) -> Result<(f64, FieldGrad)> {
    check_batch(rays, targets)?;
    let rendered = par::map_range(rays.len(), |i| render_ray(grid, &rays[i], spec));
    let mut loss = 0.0;
    let mut cached = Vec::with_capacity(rays.len());
    for i in 0..rays.len() {
        let r = rendered[i] - targets[i];
        loss += r.norm_squared();
        cached.push((rays[i], 2.0 * r));
    }
    Ok((loss, backprop_rays(grid, &cached, spec, with_density)))
}

fn check_batch(rays: &[Ray], targets: &[Rgb]) -> Result<()> {
    if rays.is_empty() {
        return Err(Error::input("photometric loss needs at least one ray"));
    }
    if rays.len() != targets.len() {
        return Err(Error::input(format!(
            "{} rays but {} target colors",
            rays.len(),
            targets.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean per-ray loss of every epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Stochastic fitting over all dataset rays with Adam. Colors are clamped to `[0, 1]`
/// and densities projected to `>= 0` after every step.
pub fn fit_photoreal(
    dataset: &Dataset,
    init: &VoxelGrid,
    config: &FitConfig,
    spec: &SampleSpec,
) -> Result<(VoxelGrid, FitReport)> {
    dataset.validate()?;
    config.validate()?;
    spec.validate()?;
    init.validate()?;

    let mut rays = Vec::new();
    let mut targets = Vec::new();
    for (v, (cam, img)) in dataset.cameras.iter().zip(&dataset.images).enumerate() {
        for y in 0..cam.height {
            for x in 0..cam.width {
                rays.push(cam.pixel_ray(x, y, Some(v as u32)));
                targets.push(img.get(x, y));
            }
        }
    }

    let mut grid = init.clone();
    let mut order: Vec<usize> = (0..rays.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = GridAdam::new(grid.voxel_count(), AdamParams::default());
    let mut report = FitReport::default();
    let total_steps = config.epochs * rays.len().div_ceil(config.batch_rays);
    let schedule = |k: usize| {
        let warm = ((k + 1) as f64 / config.warmup_steps.max(1) as f64).min(1.0);
        let progress = k as f64 / (total_steps.max(2) - 1) as f64;
        warm * config.final_lr_fraction.powf(progress)
    };

    let mut batch_rays = Vec::with_capacity(config.batch_rays);
    let mut batch_targets = Vec::with_capacity(config.batch_rays);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_rays) {
            batch_rays.clear();
            batch_targets.clear();
            batch_rays.extend(chunk.iter().map(|&i| rays[i]));
            batch_targets.extend(chunk.iter().map(|&i| targets[i]));
            let (loss, grad) =
                photometric_loss_grad(&grid, &batch_rays, &batch_targets, spec, config.optimize_density)?;
            if !loss.is_finite() || grad.max_abs().is_nan() {
                return Err(Error::Divergence {
                    iteration: report.steps,
                    loss,
                });
            }
            epoch_loss += loss;
            let f = schedule(report.steps);
            let density_lr = config.optimize_density.then_some(f * config.density_learning_rate);
            opt.step(&mut grid, &grad, f * config.learning_rate, density_lr);
            report.steps += 1;
        }
        let mean = epoch_loss / rays.len() as f64;
        log::info!("fit epoch {epoch}: mean ray loss {mean:.6}");
        report.epoch_loss.push(mean);
    }
    Ok((grid, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Camera, Vec3};
    use crate::image::ImageRgb;
    use crate::render::render_view;

    fn small_scene() -> (VoxelGrid, Camera, SampleSpec) {
        let mut g = VoxelGrid::filled([4, 4, 4], Vec3::repeat(-1.0), Vec3::repeat(1.0), 2.0, Rgb::repeat(0.5)).unwrap();
        for (i, c) in g.color.iter_mut().enumerate() {
            *c = Rgb::new((i % 4) as f64 / 4.0, 0.3, 0.6);
        }
        let cam = Camera::look_at(8, 8, 0.8, Vec3::new(0.3, 0.2, -3.0), Vec3::zeros(), Vec3::y()).unwrap();
        let spec = SampleSpec {
            step_size: 0.1,
            ..Default::default()
        };
        (g, cam, spec)
    }

    #[test]
    fn loss_is_zero_on_own_renders() {
        let (g, cam, spec) = small_scene();
        let img = render_view(&g, &cam, &spec);
        let rays = cam.rays(None);
        assert_eq!(photometric_loss(&g, &rays, &img.data, &spec).unwrap(), 0.0);
    }

    #[test]
    fn single_ray_hand_value() {
        let mut g = VoxelGrid::new([1, 1, 1], Vec3::repeat(-0.5), Vec3::repeat(0.5)).unwrap();
        g.density[0] = std::f64::consts::LN_2;
        g.color[0] = Rgb::new(1.0, 0.0, 0.0);
        let spec = SampleSpec {
            step_size: 1.0,
            max_samples: 1,
            sigma_z: 0.8,
        };
        let ray = Ray::new(Vec3::new(0.0, 0.0, -2.0), Vec3::z());
        let loss = photometric_loss(&g, &[ray], &[Rgb::zeros()], &spec).unwrap();
        assert!((loss - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_or_mismatched_batch_is_rejected() {
        let (g, _, spec) = small_scene();
        assert!(photometric_loss(&g, &[], &[], &spec).is_err());
        let ray = Ray::new(Vec3::new(0.0, 0.0, -2.0), Vec3::z());
        assert!(photometric_loss(&g, &[ray], &[], &spec).is_err());
    }

    #[test]
    fn black_dataset_drives_visible_colors_to_zero() {
        let (g, cam, spec) = small_scene();
        let ds = Dataset {
            cameras: vec![cam.clone()],
            images: vec![ImageRgb::new(8, 8)],
            masks: None,
        };
        let cfg = FitConfig {
            epochs: 150,
            batch_rays: 64,
            learning_rate: 0.05,
            optimize_density: false,
            ..Default::default()
        };
        let (fitted, report) = fit_photoreal(&ds, &g, &cfg, &spec).unwrap();
        assert_eq!(fitted.density, g.density);
        assert!(report.epoch_loss.last().unwrap() < &1e-4);
        assert!(report.epoch_loss.last() < report.epoch_loss.first());
    }

    #[test]
    fn colors_stay_in_gamut() {
        let (g, cam, spec) = small_scene();
        let ds = Dataset {
            cameras: vec![cam],
            images: vec![ImageRgb::filled(8, 8, Rgb::repeat(1.0))],
            masks: None,
        };
        let cfg = FitConfig {
            epochs: 5,
            batch_rays: 16,
            learning_rate: 0.5,
            ..Default::default()
        };
        let (fitted, _) = fit_photoreal(&ds, &g, &cfg, &spec).unwrap();
        fitted.validate().unwrap();
    }
}
