//! Run configuration, read from TOML. Every section and key is optional; unknown
//! keys are rejected.
//!
//! ```toml
//! [sample]      # step_size = 1/32, max_samples = 512, sigma_z = 0.8
//! [grid]        # starting field for `fit`
//! [fit]
//! [dictionary]
//! [weights]
//! [style]
//! [toy]         # scene for `gen-toy`
//! [extractor]   # kind = "builtin" | "external", features = "<dir>"
//! [eval]
//! [paths]       # defaults for the input path flags
//! ```

use std::path::{Path, PathBuf};

use refnpr_core::fit::FitConfig;
use refnpr_core::registration::DictConfig;
use refnpr_core::style::{LossWeights, StyleConfig, StyleOptions};
use refnpr_core::toy::ToyConfig;
use refnpr_core::{Rgb, SampleSpec, Vec3, VoxelGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sample: SampleSpec,
    pub grid: GridInit,
    pub fit: FitConfig,
    pub dictionary: DictConfig,
    pub weights: LossWeights,
    pub style: StyleConfig,
    pub toy: ToyConfig,
    pub extractor: ExtractorConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

/// Uniform field that `fit` starts from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridInit {
    pub resolution: [usize; 3],
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub density: f64,
    pub color: [f64; 3],
}

impl Default for GridInit {
    fn default() -> Self {
        Self {
            resolution: [32; 3],
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
            density: 0.1,
            color: [0.5; 3],
        }
    }
}

impl GridInit {
    pub fn build(&self) -> Result<VoxelGrid, CliError> {
        Ok(VoxelGrid::filled(
            self.resolution,
            Vec3::from(self.bbox_min),
            Vec3::from(self.bbox_max),
            self.density,
            Rgb::from(self.color),
        )?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    #[default]
    Builtin,
    /// Maps exported offline: `<name>.rnfm` next to the `<name>.png` it describes.
    External,
}

/// Features used for color matching. The feature loss always uses the built-in
/// descriptor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    pub features: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Score the path views nearest each reference against it.
    pub similarity: bool,
    pub similarity_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            similarity: true,
            similarity_k: 3,
        }
    }
}

/// Fallbacks for input flags left off the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub refs: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    pub path: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes to JSON")
    }

    pub fn style_options(&self) -> StyleOptions {
        StyleOptions {
            dictionary: self.dictionary.clone(),
            weights: self.weights,
            style: self.style.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sample.validate()?;
        self.fit.validate()?;
        self.dictionary.validate()?;
        self.weights.validate()?;
        self.style.validate()?;
        self.toy.validate()?;
        if self.extractor.kind == ExtractorKind::External && self.extractor.features.is_none() {
            return Err(CliError::config(
                "extractor.kind = \"external\" needs extractor.features",
            ));
        }
        if self.eval.similarity_k == 0 {
            return Err(CliError::config("eval.similarity_k must be at least 1"));
        }
        Ok(())
    }
}
