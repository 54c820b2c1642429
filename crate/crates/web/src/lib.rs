//! Browser demo over the toy scene. Build with
//! `wasm-pack build crates/web --target web --out-dir www/pkg` and serve `www/`.
//!
//! Three operations: render the current field from an orbit angle, show its
//! pseudo-depth, and propagate a hue-rotated reference view to the whole field.

use refnpr_core::color::hue_rotate_image;
use refnpr_core::registration::StyleReference;
use refnpr_core::style::{stylize, StyleOptions};
use refnpr_core::toy::{self, ToyConfig};
use refnpr_core::{render_depth, render_view, Camera, Result, SampleSpec, VoxelGrid};

#[cfg(target_arch = "wasm32")]
mod bindings;

pub struct Demo {
    config: ToyConfig,
    spec: SampleSpec,
    photoreal: VoxelGrid,
    current: VoxelGrid,
}

/// Small enough to stylize in a second or two on one thread.
fn demo_options() -> StyleOptions {
    let mut o = StyleOptions::default();
    o.dictionary.resolution = 48;
    o.style.epochs = 3;
    o.style.frozen_content_epoch = 2;
    o.style.pseudo_ray_batch = 1024;
    o.style.learning_rate = 0.03;
    o
}

impl Demo {
    pub fn new(resolution: usize, image_size: usize) -> Result<Self> {
        let config = ToyConfig {
            resolution,
            image_size,
            train_views: 8,
            ..Default::default()
        };
        let spec = SampleSpec {
            step_size: 1.0 / 24.0,
            ..Default::default()
        };
        let photoreal = toy::ground_truth_grid(&config)?;
        Ok(Self {
            config,
            spec,
            current: photoreal.clone(),
            photoreal,
        })
    }

    fn camera(&self, azimuth: f64, elevation: f64) -> Result<Camera> {
        toy::orbit_camera(&self.config, azimuth, elevation)
    }

    pub fn image_size(&self) -> usize {
        self.config.image_size
    }

    /// RGBA pixels of the current field.
    pub fn render(&self, azimuth: f64, elevation: f64) -> Result<Vec<u8>> {
        Ok(render_view(&self.current, &self.camera(azimuth, elevation)?, &self.spec).to_rgba8())
    }

    /// RGBA visualization of the pseudo-depth: near is bright, no surface is black.
    pub fn depth(&self, azimuth: f64, elevation: f64) -> Result<Vec<u8>> {
        let d = render_depth(&self.current, &self.camera(azimuth, elevation)?, &self.spec);
        Ok(d.to_image().to_rgba8())
    }

    /// Stylizes the photorealistic field from a single reference seen at `azimuth`,
    /// whose style is its own render with hues rotated by `hue_degrees`. Returns the
    /// number of registered pseudo-rays.
    pub fn propagate_hue(&mut self, azimuth: f64, elevation: f64, hue_degrees: f64) -> Result<usize> {
        let camera = self.camera(azimuth, elevation)?;
        let style = hue_rotate_image(&render_view(&self.photoreal, &camera, &self.spec), hue_degrees);
        let cameras = toy::train_angles(&self.config)
            .into_iter()
            .map(|(a, e)| self.camera(a, e))
            .collect::<Result<Vec<_>>>()?;
        let reference = StyleReference {
            camera,
            style,
            mask: None,
        };
        let (grid, log) = stylize(
            &self.photoreal,
            &[reference],
            &cameras,
            &demo_options(),
            &self.spec,
            None,
        )?;
        self.current = grid;
        Ok(log.pseudo_rays)
    }

    pub fn reset(&mut self) {
        self.current = self.photoreal.clone();
    }

    pub fn is_stylized(&self) -> bool {
        self.current != self.photoreal
    }
}
