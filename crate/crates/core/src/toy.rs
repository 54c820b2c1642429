//! Procedural toy scene: colored boxes and spheres on a floor slab, voxelized onto
//! the same grid layout the fitter uses, with cameras on an orbit around it.

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Vec3};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::image::Rgb;
use crate::par;
use crate::render::{render_view, SampleSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub resolution: usize,
    pub image_size: usize,
    pub train_views: usize,
    pub test_views: usize,
    pub radius: f64,
    pub fov_x: f64,
    /// Density inside solid objects.
    pub density: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            image_size: 64,
            train_views: 20,
            test_views: 8,
            radius: 3.2,
            fov_x: 0.69,
            density: 40.0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 || self.image_size == 0 || self.train_views == 0 {
            return Err(Error::input(
                "toy scene needs resolution >= 2, a non-empty image and views",
            ));
        }
        if !(self.radius > 1.8) {
            return Err(Error::input("toy orbit radius must keep cameras outside the scene box"));
        }
        if !(self.fov_x > 0.0 && self.fov_x < std::f64::consts::PI) || !(self.density >= 0.0) {
            return Err(Error::input("toy fov must be in (0, pi) and density non-negative"));
        }
        Ok(())
    }
}

enum Shape {
    Box { min: Vec3, max: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

impl Shape {
    fn contains(&self, p: &Vec3) -> bool {
        match self {
            Shape::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Shape::Sphere { center, radius } => (p - center).norm() <= *radius,
        }
    }
}

fn objects() -> Vec<(Shape, Rgb)> {
    vec![
        (
            Shape::Box {
                min: Vec3::new(-1.0, -1.0, -1.0),
                max: Vec3::new(1.0, -0.8, 1.0),
            },
            Rgb::new(0.55, 0.5, 0.45),
        ),
        (
            Shape::Box {
                min: Vec3::new(-0.7, -0.8, -0.6),
                max: Vec3::new(-0.15, -0.1, -0.05),
            },
            Rgb::new(0.85, 0.2, 0.15),
        ),
        (
            Shape::Sphere {
                center: Vec3::new(0.4, -0.4, -0.35),
                radius: 0.38,
            },
            Rgb::new(0.2, 0.7, 0.3),
        ),
        (
            Shape::Box {
                min: Vec3::new(0.05, -0.8, 0.2),
                max: Vec3::new(0.6, 0.3, 0.7),
            },
            Rgb::new(0.2, 0.35, 0.85),
        ),
        (
            Shape::Sphere {
                center: Vec3::new(-0.45, -0.5, 0.5),
                radius: 0.3,
            },
            Rgb::new(0.9, 0.8, 0.2),
        ),
    ]
}

/// Ground-truth field in `[-1, 1]^3`. Voxels whose center lies in an object take
/// its color; later objects win overlaps.
pub fn ground_truth_grid(config: &ToyConfig) -> Result<VoxelGrid> {
    config.validate()?;
    let n = config.resolution;
    let mut grid = VoxelGrid::new([n; 3], Vec3::repeat(-1.0), Vec3::repeat(1.0))?;
    let shapes = objects();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = grid.voxel_center(x, y, z);
                let i = grid.index(x, y, z);
                if let Some((_, c)) = shapes.iter().rev().find(|(s, _)| s.contains(&p)) {
                    grid.density[i] = config.density;
                    grid.color[i] = *c;
                }
            }
        }
    }
    Ok(grid)
}

/// Camera on the orbit, looking at the scene center. Angles in degrees, elevation
/// measured up from the floor plane.
pub fn orbit_camera(config: &ToyConfig, azimuth: f64, elevation: f64) -> Result<Camera> {
    let (az, el) = (azimuth.to_radians(), elevation.to_radians());
    let eye = config.radius * Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
    let s = config.image_size;
    Camera::look_at(s, s, config.fov_x, eye, Vec3::new(0.0, -0.3, 0.0), Vec3::y())
}

/// `(azimuth, elevation)` of the training orbit.
pub fn train_angles(config: &ToyConfig) -> Vec<(f64, f64)> {
    let n = config.train_views;
    (0..n)
        .map(|i| {
            let el = if i % 2 == 0 { 20.0 } else { 40.0 };
            (i as f64 * 360.0 / n as f64, el)
        })
        .collect()
}

/// Held-out angles, interleaved between training azimuths.
pub fn test_angles(config: &ToyConfig) -> Vec<(f64, f64)> {
    let n = config.test_views;
    (0..n)
        .map(|i| {
            (
                i as f64 * 360.0 / n as f64 + 360.0 / (2.0 * config.train_views as f64),
                30.0,
            )
        })
        .collect()
}

/// `count` cameras within `spread` degrees of azimuth around `(azimuth, elevation)`.
pub fn nearby_cameras(
    config: &ToyConfig,
    azimuth: f64,
    elevation: f64,
    count: usize,
    spread: f64,
) -> Result<Vec<Camera>> {
    (0..count)
        .map(|i| {
            let t = if count == 1 {
                0.0
            } else {
                i as f64 / (count - 1) as f64 * 2.0 - 1.0
            };
            let de = if i % 2 == 0 { 4.0 } else { -4.0 };
            orbit_camera(config, azimuth + t * spread, elevation + de)
        })
        .collect()
}

pub struct ToyScene {
    pub config: ToyConfig,
    pub grid: VoxelGrid,
    pub train: Dataset,
    pub test: Dataset,
}

fn render_set(grid: &VoxelGrid, config: &ToyConfig, angles: &[(f64, f64)], spec: &SampleSpec) -> Result<Dataset> {
    let cameras = angles
        .iter()
        .map(|&(a, e)| orbit_camera(config, a, e))
        .collect::<Result<Vec<_>>>()?;
    let images = par::map_collect(&cameras, |c| render_view(grid, c, spec));
    Ok(Dataset {
        cameras,
        images,
        masks: None,
    })
}

pub fn generate(config: &ToyConfig, spec: &SampleSpec) -> Result<ToyScene> {
    spec.validate()?;
    let grid = ground_truth_grid(config)?;
    let train = render_set(&grid, config, &train_angles(config), spec)?;
    let test = render_set(&grid, config, &test_angles(config), spec)?;
    Ok(ToyScene {
        config: config.clone(),
        grid,
        train,
        test,
    })
}

/// Uniform starting field for fitting a toy-sized grid.
pub fn initial_grid(config: &ToyConfig) -> Result<VoxelGrid> {
    let n = config.resolution;
    VoxelGrid::filled([n; 3], Vec3::repeat(-1.0), Vec3::repeat(1.0), 0.1, Rgb::repeat(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::ray_opacity;

    #[test]
    fn scene_is_seen_by_every_camera() {
        let cfg = ToyConfig {
            image_size: 16,
            ..Default::default()
        };
        let scene = generate(&cfg, &SampleSpec::default()).unwrap();
        assert_eq!(scene.train.len(), 20);
        assert_eq!(scene.test.len(), 8);
        for cam in &scene.train.cameras {
            let center = cam.pixel_ray(8, 8, None);
            assert!(ray_opacity(&scene.grid, &center, &SampleSpec::default()) > 0.99);
            let corner = cam.pixel_ray(0, 0, None);
            assert!(ray_opacity(&scene.grid, &corner, &SampleSpec::default()) < 0.01);
        }
    }

    #[test]
    fn grid_has_all_objects() {
        let g = ground_truth_grid(&ToyConfig::default()).unwrap();
        let mut colors: Vec<[u8; 3]> = g
            .density
            .iter()
            .zip(&g.color)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, c)| [(c[0] * 255.0) as u8, (c[1] * 255.0) as u8, (c[2] * 255.0) as u8])
            .collect();
        colors.sort();
        colors.dedup();
        assert_eq!(colors.len(), 5);
    }
}
