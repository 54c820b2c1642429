//! Loading externally exported feature maps.

use std::path::Path;

use refnpr_core::tcm::{FeatureMap, PrecomputedFeatures};
use refnpr_core::ImageRgb;

use crate::error::CliError;

/// Every `<name>.rnfm` in `dir` paired with `<name>.png`. A map computed at half the
/// image size is keyed by the downsampled image, matching `style.downsample`.
pub fn load_external(dir: &Path) -> Result<PrecomputedFeatures, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut maps: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rnfm"))
        .collect();
    maps.sort();
    if maps.is_empty() {
        return Err(CliError::new(
            "extractor",
            format!("no .rnfm files in {}", dir.display()),
        ));
    }
    let mut out = PrecomputedFeatures::new(dir.display().to_string());
    for path in maps {
        let map = FeatureMap::load(&path)?;
        let png = path.with_extension("png");
        if !png.exists() {
            return Err(CliError::new(
                "extractor",
                format!("{} has no matching image {}", path.display(), png.display()),
            ));
        }
        let (img, _) = ImageRgb::load_png(&png)?;
        let keyed = if map.source_dims == (img.height, img.width) {
            img
        } else if map.source_dims == (img.height / 2, img.width / 2) {
            img.downsample2()
        } else {
            return Err(CliError::new(
                "extractor",
                format!(
                    "{} was computed for {}x{} but {} is {}x{}",
                    path.display(),
                    map.source_dims.1,
                    map.source_dims.0,
                    png.display(),
                    img.width,
                    img.height
                ),
            ));
        };
        out.insert(&keyed, map)?;
    }
    log::info!("loaded {} external feature maps", out.len());
    Ok(out)
}
