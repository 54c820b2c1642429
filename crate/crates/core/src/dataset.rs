//! Posed image datasets in the `transforms.json` layout.
//!
//! ```json
//! { "camera_angle_x": 0.69,
//!   "frames": [ { "file_path": "./train/r_0", "transform_matrix": [[..4..], ..] } ] }
//! ```
//!
//! `transform_matrix` is a row-major world-from-camera matrix in the OpenGL
//! convention. `file_path` is relative to the json file; a missing extension means
//! `.png`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{ImageRgb, MaskImage};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageRgb>,
    pub masks: Option<Vec<MaskImage>>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::input("dataset is empty"));
        }
        if self.cameras.len() != self.images.len() {
            return Err(Error::input(format!(
                "dataset has {} cameras but {} images",
                self.cameras.len(),
                self.images.len()
            )));
        }
        if let Some(masks) = &self.masks {
            if masks.len() != self.images.len() {
                return Err(Error::input("dataset mask count differs from image count"));
            }
        }
        for (i, (c, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            if (c.width, c.height) != (img.width, img.height) {
                return Err(Error::input(format!(
                    "view {i}: image is {}x{} but camera is {}x{}",
                    img.width, img.height, c.width, c.height
                )));
            }
            if let Some(m) = self.masks.as_ref().map(|m| &m[i]) {
                if (m.width, m.height) != (img.width, img.height) {
                    return Err(Error::input(format!("view {i}: mask size mismatch")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformsFile {
    pub camera_angle_x: f64,
    pub frames: Vec<Frame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
}

pub fn read_transforms(dir: impl AsRef<Path>) -> Result<TransformsFile> {
    let path = dir.as_ref().join("transforms.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("transforms.json", e.to_string()))
}

pub fn frame_image_path(dir: &Path, frame: &Frame) -> PathBuf {
    let p = dir.join(&frame.file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Loads a dataset directory. Masks are produced when any image has an alpha channel.
#[cfg(feature = "png")]
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Dataset, Vec<String>)> {
    let dir = dir.as_ref();
    let tf = read_transforms(dir)?;
    let mut cameras = Vec::new();
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut any_mask = false;
    let mut names = Vec::new();
    for frame in &tf.frames {
        let path = frame_image_path(dir, frame);
        let (img, mask) = ImageRgb::load_png(&path)?;
        any_mask |= mask.is_some();
        masks.push(mask.unwrap_or_else(|| MaskImage::new(img.width, img.height, true)));
        cameras.push(Camera::from_gl_matrix(
            img.width,
            img.height,
            tf.camera_angle_x,
            &frame.transform_matrix,
        )?);
        images.push(img);
        names.push(
            Path::new(&frame.file_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    let ds = Dataset {
        cameras,
        images,
        masks: any_mask.then_some(masks),
    };
    ds.validate()?;
    Ok((ds, names))
}

/// Cameras only; images are not read (useful for render paths).
pub fn load_cameras(dir: impl AsRef<Path>, width: usize, height: usize) -> Result<Vec<Camera>> {
    let tf = read_transforms(dir)?;
    tf.frames
        .iter()
        .map(|f| Camera::from_gl_matrix(width, height, tf.camera_angle_x, &f.transform_matrix))
        .collect()
}

/// Writes `transforms.json` plus one PNG per view named `<prefix>_<i>.png`.
#[cfg(feature = "png")]
pub fn save_dataset(dir: impl AsRef<Path>, prefix: &str, cameras: &[Camera], images: &[ImageRgb]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let Some(first) = cameras.first() else {
        return Err(Error::input("cannot save an empty dataset"));
    };
    let mut frames = Vec::new();
    for (i, (cam, img)) in cameras.iter().zip(images).enumerate() {
        let name = format!("{prefix}_{i}");
        img.save_png(dir.join(format!("{name}.png")))?;
        frames.push(Frame {
            file_path: format!("./{name}"),
            transform_matrix: cam.to_gl_matrix(),
        });
    }
    write_transforms(
        dir,
        &TransformsFile {
            camera_angle_x: first.fov_x(),
            frames,
        },
    )
}

pub fn write_transforms(dir: impl AsRef<Path>, tf: &TransformsFile) -> Result<()> {
    let path = dir.as_ref().join("transforms.json");
    let text = serde_json::to_string_pretty(tf).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
