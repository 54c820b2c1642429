//! Reference-driven stylization of voxel radiance fields.
//!
//! A photorealistic field is fitted to posed images ([`fit`]), stylized reference
//! views are lifted into 3D through pseudo-depth and registered against every
//! training ray ([`registration`]), occluded content is matched to the reference
//! template in feature space ([`tcm`]), and a copy of the field with frozen density is
//! optimized under the reference, feature and color losses ([`style`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod color;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fit;
pub mod grid;
pub mod image;
pub mod optim;
mod par;
pub mod registration;
pub mod render;
pub mod style;
pub mod tcm;
pub mod toy;

pub use camera::{intersection_point, Camera, Ray, Vec3};
pub use error::{Error, Result};
pub use grid::VoxelGrid;
pub use image::{DepthMap, ImageRgb, MaskImage, Rgb};
pub use render::{ray_depth, render_depth, render_ray, render_view, FieldGrad, SampleSpec};
