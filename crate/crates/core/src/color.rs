//! Color utilities used to build stylized references.

use nalgebra::{Matrix3, Vector3};

use crate::image::{ImageRgb, Rgb};

/// Linear hue rotation: a rotation of RGB space about the gray axis. A 120 degree
/// rotation is the cyclic channel permutation `(r, g, b) -> (b, r, g)`, which keeps
/// every color in gamut and commutes with alpha compositing.
pub fn hue_rotation_matrix(degrees: f64) -> Matrix3<f64> {
    let axis = Vector3::repeat(1.0 / 3f64.sqrt());
    let (s, c) = degrees.to_radians().sin_cos();
    let k = axis.cross_matrix();
    Matrix3::identity() * c + k * s + axis * axis.transpose() * (1.0 - c)
}

pub fn hue_rotate(c: &Rgb, degrees: f64) -> Rgb {
    (hue_rotation_matrix(degrees) * c).map(|v| v.clamp(0.0, 1.0))
}

pub fn hue_rotate_image(img: &ImageRgb, degrees: f64) -> ImageRgb {
    let m = hue_rotation_matrix(degrees);
    img.map(|c| (m * c).map(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn third_turn_is_channel_cycle() {
        let c = Rgb::new(0.9, 0.2, 0.4);
        assert_relative_eq!(hue_rotate(&c, 120.0), Rgb::new(0.4, 0.9, 0.2), epsilon = 1e-12);
    }

    #[test]
    fn gray_is_fixed() {
        let g = Rgb::repeat(0.3);
        assert_relative_eq!(hue_rotate(&g, 37.0), g, epsilon = 1e-12);
    }
}
