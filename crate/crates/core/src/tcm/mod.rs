//! Template-based correspondence.
//!
//! Content views are matched against the reference content in feature space and the
//! matched cells of the stylized reference are gathered into guidance features. A
//! coarser map drives patch-level color targets.

mod descriptor;
mod feature_map;
mod matching;

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

pub use descriptor::BuiltinDescriptor;
pub use feature_map::FeatureMap;
pub use matching::{build_guidance, cosine_distance, cosine_distance_grad, match_features, MatchMap};

use crate::error::{Error, Result};
use crate::image::{ImageRgb, Rgb};

/// Default gate on the best color-matching distance.
pub const COLOR_MATCH_GATE: f64 = 0.4;

/// Source of dense feature maps.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn stride(&self) -> usize;
    fn channels(&self) -> usize;
    fn differentiable(&self) -> bool;
    fn extract(&self, image: &ImageRgb) -> Result<FeatureMap>;

    /// Pixel gradients given `d_loss/d_features` for the map of `image`.
    fn backward(&self, _image: &ImageRgb, _grad: &FeatureMap) -> Result<Vec<Rgb>> {
        Err(Error::NotDifferentiable(self.name().to_string()))
    }
}

/// Feature maps computed offline (e.g. by a CNN exporter) and looked up by the
/// 8-bit content of the image they were computed from.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedFeatures {
    name: String,
    stride: usize,
    channels: usize,
    maps: HashMap<u64, FeatureMap>,
}

impl PrecomputedFeatures {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn fingerprint(image: &ImageRgb) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (image.width, image.height).hash(&mut h);
        image.to_rgb8().hash(&mut h);
        h.finish()
    }

    pub fn insert(&mut self, image: &ImageRgb, map: FeatureMap) -> Result<()> {
        if map.source_dims != (image.height, image.width) {
            return Err(Error::input(format!(
                "feature map was computed for a {}x{} image, got {}x{}",
                map.source_dims.1, map.source_dims.0, image.width, image.height
            )));
        }
        if self.maps.is_empty() {
            self.stride = map.stride;
            self.channels = map.channels;
        } else if (map.stride, map.channels) != (self.stride, self.channels) {
            return Err(Error::input("precomputed maps must share stride and channel count"));
        }
        self.maps.insert(Self::fingerprint(image), map);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

impl FeatureExtractor for PrecomputedFeatures {
    fn name(&self) -> &str {
        &self.name
    }

    fn stride(&self) -> usize {
        self.stride
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn differentiable(&self) -> bool {
        false
    }

    fn extract(&self, image: &ImageRgb) -> Result<FeatureMap> {
        self.maps
            .get(&Self::fingerprint(image))
            .cloned()
            .ok_or_else(|| Error::input(format!("no precomputed `{}` features for this image", self.name)))
    }
}

/// Mean color of every `stride x stride` cell (partial border cells included).
pub fn patch_means(image: &ImageRgb, stride: usize) -> Vec<Rgb> {
    let gw = image.width.div_ceil(stride);
    let gh = image.height.div_ceil(stride);
    let mut sums = vec![Rgb::zeros(); gw * gh];
    let mut counts = vec![0usize; gw * gh];
    for y in 0..image.height {
        for x in 0..image.width {
            let c = (y / stride) * gw + x / stride;
            sums[c] += image.get(x, y);
            counts[c] += 1;
        }
    }
    sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect()
}

/// Per-cell color targets for one content view.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorTargets {
    pub grid_h: usize,
    pub grid_w: usize,
    pub stride: usize,
    pub targets: Vec<Rgb>,
    pub valid: Vec<bool>,
    pub matches: MatchMap,
}

impl ColorTargets {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Content/style features of every reference view, stacked so that one match covers
/// all references.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub content_mid: FeatureMap,
    pub style_mid: FeatureMap,
    pub content_coarse: FeatureMap,
    /// Mean style color of every stacked coarse cell.
    pub style_patch_means: Vec<Rgb>,
    pub coarse_stride: usize,
}

impl Template {
    /// `pairs` holds `(content, style)` images per reference view.
    pub fn build(
        pairs: &[(&ImageRgb, &ImageRgb)],
        mid: &dyn FeatureExtractor,
        coarse: &dyn FeatureExtractor,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::input("template needs at least one reference view"));
        }
        let mut content_mid = Vec::new();
        let mut style_mid = Vec::new();
        let mut content_coarse = Vec::new();
        let mut style_patch_means = Vec::new();
        for (content, style) in pairs {
            if (content.width, content.height) != (style.width, style.height) {
                return Err(Error::input("reference content and style images differ in size"));
            }
            content_mid.push(mid.extract(content)?);
            style_mid.push(mid.extract(style)?);
            let cc = coarse.extract(content)?;
            let means = patch_means(style, coarse.stride());
            if means.len() != cc.cells() {
                return Err(Error::input("coarse extractor stride does not tile the reference"));
            }
            style_patch_means.extend(means);
            content_coarse.push(cc);
        }
        Ok(Self {
            content_mid: FeatureMap::stack(&content_mid)?,
            style_mid: FeatureMap::stack(&style_mid)?,
            content_coarse: FeatureMap::stack(&content_coarse)?,
            style_patch_means,
            coarse_stride: coarse.stride(),
        })
    }

    /// Guidance features for a content view's mid-level map.
    pub fn guidance(&self, content_mid: &FeatureMap) -> Result<(MatchMap, FeatureMap)> {
        let m = match_features(content_mid, &self.content_mid, None)?;
        let g = build_guidance(&m, &self.style_mid)?;
        Ok((m, g))
    }

    pub fn color_targets(&self, content_coarse: &FeatureMap, gate: f64) -> Result<ColorTargets> {
        let matches = match_features(content_coarse, &self.content_coarse, Some(gate))?;
        let targets = matches.index.iter().map(|&j| self.style_patch_means[j]).collect();
        Ok(ColorTargets {
            grid_h: content_coarse.grid_h,
            grid_w: content_coarse.grid_w,
            stride: self.coarse_stride,
            targets,
            valid: matches.valid.clone(),
            matches,
        })
    }
}

/// Matches the deep features of `content` against `ref_content` and assigns each
/// valid cell the mean `ref_style` color of its matched cell.
pub fn color_targets(
    content: &ImageRgb,
    ref_content: &ImageRgb,
    ref_style: &ImageRgb,
    extractor: &dyn FeatureExtractor,
    gate: f64,
) -> Result<ColorTargets> {
    if (ref_content.width, ref_content.height) != (ref_style.width, ref_style.height) {
        return Err(Error::input("reference content and style images differ in size"));
    }
    let content_f = extractor.extract(content)?;
    let ref_f = extractor.extract(ref_content)?;
    let means = patch_means(ref_style, extractor.stride());
    if means.len() != ref_f.cells() {
        return Err(Error::input("extractor stride does not tile the reference"));
    }
    let matches = match_features(&content_f, &ref_f, Some(gate))?;
    Ok(ColorTargets {
        grid_h: content_f.grid_h,
        grid_w: content_f.grid_w,
        stride: extractor.stride(),
        targets: matches.index.iter().map(|&j| means[j]).collect(),
        valid: matches.valid.clone(),
        matches,
    })
}
