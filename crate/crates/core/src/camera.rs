//! Pinhole cameras and primary rays.
//!
//! Camera space follows the computer-vision convention: `+x` right, `+y` down and
//! `+z` forward. The pose maps camera coordinates to world coordinates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-from-camera rotation.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates.
    pub translation: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel: Option<(u32, u32)>,
    pub view_id: Option<u32>,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
            pixel: None,
            view_id: None,
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// `x(r) = o + l d`.
pub fn intersection_point(ray: &Ray, length: f64) -> Result<Vec3> {
    if !(length >= 0.0) {
        return Err(Error::input(format!("ray length must be non-negative, got {length}")));
    }
    Ok(ray.at(length))
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with square pixels, centered principal point and horizontal field of view
    /// `fov_x` (radians).
    pub fn from_fov(
        width: usize,
        height: usize,
        fov_x: f64,
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(
            width,
            height,
            f,
            f,
            0.5 * width as f64,
            0.5 * height as f64,
            rotation,
            translation,
        )
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(width: usize, height: usize, fov_x: f64, eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::input("look_at: view direction is parallel to up"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::from_fov(width, height, fov_x, rotation, eye)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::input("camera must have non-zero dimensions"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::input("camera focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::input(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let r = &self.rotation;
        let off = (r.transpose() * r - Matrix3::identity()).abs().max();
        if off > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::input("camera rotation is not a proper rotation"));
        }
        Ok(())
    }

    #[inline]
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    #[inline]
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Back-projects the center of pixel `(px, py)`; fractional pixels are allowed and
    /// the pixel center sits at `px + 0.5`.
    pub fn generate_ray(&self, px: f64, py: f64) -> Result<Ray> {
        if !(px >= 0.0 && px < self.width as f64 && py >= 0.0 && py < self.height as f64) {
            return Err(Error::input(format!(
                "pixel ({px}, {py}) outside the {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.ray_through(px, py))
    }

    /// Ray through integer pixel `(x, y)`, tagged with the pixel and `view_id`.
    pub fn pixel_ray(&self, x: usize, y: usize, view_id: Option<u32>) -> Ray {
        debug_assert!(x < self.width && y < self.height);
        let mut ray = self.ray_through(x as f64, y as f64);
        ray.pixel = Some((x as u32, y as u32));
        ray.view_id = view_id;
        ray
    }

    fn ray_through(&self, px: f64, py: f64) -> Ray {
        let d_cam = Vec3::new((px + 0.5 - self.cx) / self.fx, (py + 0.5 - self.cy) / self.fy, 1.0);
        Ray::new(self.translation, self.rotation * d_cam)
    }

    /// All pixel rays in scanline order.
    pub fn rays(&self, view_id: Option<u32>) -> Vec<Ray> {
        let mut out = Vec::with_capacity(self.pixel_count());
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.pixel_ray(x, y, view_id));
            }
        }
        out
    }

    /// Pose as a world-from-camera matrix in the OpenGL/Blender convention
    /// (`-z` forward, `+y` up) used by `transforms.json`.
    pub fn to_gl_matrix(&self) -> [[f64; 4]; 4] {
        let flip = Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        let r = self.rotation * flip;
        let t = self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_gl_matrix(width: usize, height: usize, fov_x: f64, m: &[[f64; 4]; 4]) -> Result<Self> {
        let r_gl = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        let flip = Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        Self::from_fov(width, height, fov_x, r_gl * flip, Vec3::new(m[0][3], m[1][3], m[2][3]))
    }

    /// Horizontal field of view in radians.
    pub fn fov_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.fx).atan()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_cam(w: usize, h: usize, f: f64, c: f64) -> Camera {
        Camera::new(w, h, f, f, c, c, Matrix3::identity(), Vec3::zeros()).unwrap()
    }

    #[test]
    fn principal_ray_points_forward() {
        let cam = identity_cam(8, 8, 4.0, 4.0);
        let r = cam.generate_ray(3.5, 3.5).unwrap();
        assert_relative_eq!(r.direction, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        assert_eq!(r.origin, cam.translation);
    }

    #[test]
    fn corner_pixel_matches_hand_computation() {
        let cam = identity_cam(4, 4, 2.0, 2.0);
        let r = cam.generate_ray(0.0, 0.0).unwrap();
        let expect = Vec3::new((0.5 - 2.0) / 2.0, (0.5 - 2.0) / 2.0, 1.0).normalize();
        assert_relative_eq!(r.direction, expect, epsilon = 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_is_rejected() {
        let cam = identity_cam(4, 4, 2.0, 2.0);
        assert!(cam.generate_ray(4.0, 0.0).is_err());
        assert!(cam.generate_ray(-0.1, 0.0).is_err());
    }

    #[test]
    fn invalid_rotation_is_rejected() {
        let r = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Camera::new(4, 4, 2.0, 2.0, 2.0, 2.0, r, Vec3::zeros()).is_err());
    }

    #[test]
    fn gl_matrix_roundtrip() {
        let cam = Camera::look_at(
            16,
            12,
            0.7,
            Vec3::new(1.0, 2.0, -3.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        let back = Camera::from_gl_matrix(16, 12, cam.fov_x(), &cam.to_gl_matrix()).unwrap();
        assert_relative_eq!(back.rotation, cam.rotation, epsilon = 1e-12);
        assert_relative_eq!(back.fx, cam.fx, epsilon = 1e-9);
        // The principal ray hits the look-at target.
        let r = cam.generate_ray(7.5, 5.5).unwrap();
        let to_target = (-cam.translation).normalize();
        assert_relative_eq!(r.direction, to_target, epsilon = 1e-12);
    }

    #[test]
    fn intersection_point_rejects_negative_length() {
        let r = Ray::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(intersection_point(&r, 3.0).unwrap(), Vec3::new(0.0, 0.0, 3.0));
        assert_eq!(intersection_point(&r, 0.0).unwrap(), r.origin);
        assert!(intersection_point(&r, -1.0).is_err());
    }
}
