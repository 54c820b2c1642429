//! Per-parameter adaptive optimizer over voxel grids.

use serde::{Deserialize, Serialize};

use crate::grid::VoxelGrid;
use crate::image::Rgb;
use crate::render::FieldGrad;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Colors are clamped to `[0, 1]` and densities to
/// `>= 0` after every step.
#[derive(Clone, Debug)]
pub struct GridAdam {
    params: AdamParams,
    step: u64,
    m_density: Vec<f64>,
    v_density: Vec<f64>,
    m_color: Vec<Rgb>,
    v_color: Vec<Rgb>,
}

impl GridAdam {
    pub fn new(voxels: usize, params: AdamParams) -> Self {
        Self {
            params,
            step: 0,
            m_density: vec![0.0; voxels],
            v_density: vec![0.0; voxels],
            m_color: vec![Rgb::zeros(); voxels],
            v_color: vec![Rgb::zeros(); voxels],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, grid: &mut VoxelGrid, grad: &FieldGrad, lr_color: f64, lr_density: Option<f64>) {
        let AdamParams { beta1, beta2, eps } = self.params;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        for i in 0..grid.voxel_count() {
            let g = grad.color[i];
            let m = &mut self.m_color[i];
            let v = &mut self.v_color[i];
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g.component_mul(&g);
            if m.iter().all(|x| *x == 0.0) {
                continue;
            }
            let c = &mut grid.color[i];
            for ch in 0..3 {
                let update = lr_color * (m[ch] / bc1) / ((v[ch] / bc2).sqrt() + eps);
                c[ch] = (c[ch] - update).clamp(0.0, 1.0);
            }
        }

        if let Some(lr) = lr_density {
            for i in 0..grid.voxel_count() {
                let g = grad.density[i];
                let m = &mut self.m_density[i];
                let v = &mut self.v_density[i];
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                if *m == 0.0 {
                    continue;
                }
                let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                grid.density[i] = (grid.density[i] - update).max(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Vec3;

    #[test]
    fn zero_gradient_leaves_grid_untouched() {
        let mut g = VoxelGrid::filled([2, 2, 2], Vec3::zeros(), Vec3::repeat(1.0), 1.0, Rgb::repeat(0.5)).unwrap();
        let before = g.clone();
        let mut opt = GridAdam::new(8, AdamParams::default());
        opt.step(&mut g, &FieldGrad::for_grid(&before), 0.1, Some(0.1));
        assert_eq!(g, before);
    }

    #[test]
    fn step_descends_and_clamps() {
        let mut g = VoxelGrid::filled([1, 1, 1], Vec3::zeros(), Vec3::repeat(1.0), 0.05, Rgb::repeat(0.95)).unwrap();
        let mut grad = FieldGrad::for_grid(&g);
        grad.color[0] = Rgb::new(-1.0, 1.0, 0.0);
        grad.density[0] = 1.0;
        let mut opt = GridAdam::new(1, AdamParams::default());
        opt.step(&mut g, &grad, 0.1, Some(0.1));
        assert_eq!(g.color[0][0], 1.0);
        assert!((g.color[0][1] - 0.85).abs() < 1e-6);
        assert_eq!(g.color[0][2], 0.95);
        assert_eq!(g.density[0], 0.0);
    }
}
