//! Optimization of the stylized field.
//!
//! The stylized field starts as a copy of the photorealistic one and only its colors
//! move. Three terms drive it: a per-ray loss on registered pseudo-rays, a feature
//! loss against TCM guidance and a patch-level color loss against matched reference
//! colors. Image-space terms are rendered once per view; their pixel gradients are
//! cached and pushed back ray by ray.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::image::{ImageRgb, Rgb};
use crate::optim::{AdamParams, GridAdam};
use crate::par;
use crate::registration::{
    build_dictionary, collect_pseudo_rays, erode_mask, DictConfig, DictStats, PseudoRay, PseudoRaySet, StyleReference,
};
use crate::render::{backprop_rays, render_ray, render_view, FieldGrad, SampleSpec};
use crate::tcm::{
    cosine_distance, cosine_distance_grad, patch_means, BuiltinDescriptor, ColorTargets, FeatureExtractor, FeatureMap,
    Template, COLOR_MATCH_GATE,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_f: f64,
    pub lambda_c: f64,
    /// Content preservation inside the feature loss.
    pub lambda_prime: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_f: 1.0,
            lambda_c: 5.0,
            lambda_prime: 5e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_r, self.lambda_f, self.lambda_c, self.lambda_prime];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::input("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleConfig {
    pub epochs: usize,
    /// Epoch (0-based) at which the content generator is frozen; the remaining epochs
    /// use the snapshot and drop the color loss.
    pub frozen_content_epoch: usize,
    pub frozen_lambda_f: f64,
    pub pseudo_ray_batch: usize,
    /// Share of each pseudo-ray batch drawn from the reference cameras.
    pub ref_fraction: f64,
    pub learning_rate: f64,
    pub freeze_density: bool,
    /// Halve views before feature extraction.
    pub downsample: bool,
    pub color_gate: f64,
    pub seed: u64,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            frozen_content_epoch: 7,
            frozen_lambda_f: 0.2,
            pseudo_ray_batch: 4096,
            ref_fraction: 0.5,
            learning_rate: 0.01,
            freeze_density: true,
            downsample: false,
            color_gate: COLOR_MATCH_GATE,
            seed: 0,
        }
    }
}

impl StyleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frozen_content_epoch == 0 || self.frozen_content_epoch > self.epochs {
            return Err(Error::input("frozen_content_epoch must be in 1..=epochs"));
        }
        if !(0.0..=1.0).contains(&self.ref_fraction) {
            return Err(Error::input("ref_fraction must be in [0, 1]"));
        }
        if self.pseudo_ray_batch == 0 {
            return Err(Error::input("pseudo_ray_batch must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.frozen_lambda_f >= 0.0) {
            return Err(Error::input(
                "learning_rate must be positive and frozen_lambda_f non-negative",
            ));
        }
        if !(self.color_gate > 0.0) {
            return Err(Error::input("color_gate must be positive"));
        }
        Ok(())
    }
}

/// Mean squared error between rendered pseudo-ray colors and their inherited style
/// colors. Returns the loss and `d_loss/d_rendered` per ray.
pub fn loss_ref(grid: &VoxelGrid, batch: &[&PseudoRay], spec: &SampleSpec) -> Result<(f64, Vec<Rgb>)> {
    if batch.is_empty() {
        return Err(Error::input("reference loss needs a non-empty pseudo-ray batch"));
    }
    let n = batch.len() as f64;
    let rendered = par::map_range(batch.len(), |i| render_ray(grid, &batch[i].ray, spec));
    let mut loss = 0.0;
    let grads = rendered
        .iter()
        .zip(batch)
        .map(|(c, p)| {
            let r = c - p.color;
            loss += r.norm_squared();
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, grads))
}

/// [`loss_ref`] pushed through to the field parameters.
pub fn loss_ref_grad(
    grid: &VoxelGrid,
    batch: &[&PseudoRay],
    spec: &SampleSpec,
    with_density: bool,
) -> Result<(f64, FieldGrad)> {
    let (loss, grads) = loss_ref(grid, batch, spec)?;
    let cached: Vec<_> = batch.iter().zip(grads).map(|(p, g)| (p.ray, g)).collect();
    Ok((loss, backprop_rays(grid, &cached, spec, with_density)))
}

/// Mean over cells of `dist(F_G, F_hat) + lambda' |F_I - F_hat|^2`, with the gradient
/// with respect to `rendered` only.
pub fn loss_feat(
    rendered: &FeatureMap,
    guidance: &FeatureMap,
    content: &FeatureMap,
    lambda_prime: f64,
) -> Result<(f64, FeatureMap)> {
    if !rendered.same_shape(guidance) || !rendered.same_shape(content) {
        return Err(Error::input(format!(
            "feature loss maps differ in shape: rendered {}x{}x{}, guidance {}x{}x{}, content {}x{}x{}",
            rendered.grid_h,
            rendered.grid_w,
            rendered.channels,
            guidance.grid_h,
            guidance.grid_w,
            guidance.channels,
            content.grid_h,
            content.grid_w,
            content.channels
        )));
    }
    let n = rendered.cells() as f64;
    let mut grad = FeatureMap::zeros_like(rendered);
    let mut loss = 0.0;
    for i in 0..rendered.cells() {
        let (f, g, c) = (rendered.cell(i), guidance.cell(i), content.cell(i));
        loss += cosine_distance(f, g);
        let out = grad.cell_mut(i);
        cosine_distance_grad(f, g, out, 1.0 / n);
        for k in 0..f.len() {
            let d = f[k] - c[k];
            loss += lambda_prime * d * d;
            out[k] += 2.0 * lambda_prime * d / n;
        }
    }
    Ok((loss / n, grad))
}

/// Mean over all cells of `|mean(rendered patch) - target|^2`; invalid cells count
/// toward the normalization but contribute nothing.
pub fn loss_color(rendered: &ImageRgb, targets: &ColorTargets) -> Result<(f64, Vec<Rgb>)> {
    let s = targets.stride;
    let (gw, gh) = (rendered.width.div_ceil(s), rendered.height.div_ceil(s));
    if (gw, gh) != (targets.grid_w, targets.grid_h) {
        return Err(Error::input(format!(
            "color targets are {}x{} cells but the image tiles into {gw}x{gh}",
            targets.grid_w, targets.grid_h
        )));
    }
    let n = (gw * gh) as f64;
    let means = patch_means(rendered, s);
    let mut loss = 0.0;
    let mut cell_grad = vec![Rgb::zeros(); gw * gh];
    for (c, g) in cell_grad.iter_mut().enumerate() {
        if !targets.valid[c] {
            continue;
        }
        let r = means[c] - targets.targets[c];
        loss += r.norm_squared();
        *g = 2.0 * r / n;
    }
    let mut grads = vec![Rgb::zeros(); rendered.data.len()];
    for y in 0..rendered.height {
        for x in 0..rendered.width {
            let (cx, cy) = (x / s, y / s);
            let pw = (s.min(rendered.width - cx * s) * s.min(rendered.height - cy * s)) as f64;
            grads[y * rendered.width + x] = cell_grad[cy * gw + cx] / pw;
        }
    }
    Ok((loss / n, grads))
}

/// Pushes cached per-pixel gradients of a full render back into the field.
pub fn image_grad_backprop(
    pixel_grads: &[Rgb],
    camera: &Camera,
    grid: &VoxelGrid,
    spec: &SampleSpec,
    with_density: bool,
) -> Result<FieldGrad> {
    if pixel_grads.len() != camera.pixel_count() {
        return Err(Error::input(format!(
            "{} pixel gradients for a {}x{} camera",
            pixel_grads.len(),
            camera.width,
            camera.height
        )));
    }
    let cached: Vec<_> = camera.rays(None).into_iter().zip(pixel_grads.iter().copied()).collect();
    Ok(backprop_rays(grid, &cached, spec, with_density))
}

/// Precomputed TCM supervision for one training view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGuidance {
    pub camera: Camera,
    /// Mid-level features of the content render.
    pub content: FeatureMap,
    pub guidance: FeatureMap,
    pub color_targets: Option<ColorTargets>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewLoss {
    pub feat: f64,
    pub color: f64,
}

fn working_image(img: ImageRgb, downsample: bool) -> ImageRgb {
    if downsample {
        img.downsample2()
    } else {
        img
    }
}

/// Feature and color losses of one view (unweighted) and the gradient of
/// `lambda_f L_feat + lambda_c L_color`.
pub fn view_loss_grad(
    grid: &VoxelGrid,
    view: &ViewGuidance,
    mid: &BuiltinDescriptor,
    weights: &LossWeights,
    downsample: bool,
    spec: &SampleSpec,
    with_density: bool,
) -> Result<(ViewLoss, FieldGrad)> {
    let cam = &view.camera;
    let full = render_view(grid, cam, spec);
    let img = working_image(full, downsample);
    let rendered = mid.extract(&img)?;
    let (feat, feat_grad) = loss_feat(&rendered, &view.guidance, &view.content, weights.lambda_prime)?;
    let mut pixel = mid.backward(&img, &feat_grad)?;
    for p in &mut pixel {
        *p *= weights.lambda_f;
    }
    let mut color = 0.0;
    if let Some(t) = &view.color_targets {
        let (l, g) = loss_color(&img, t)?;
        color = l;
        for (p, gc) in pixel.iter_mut().zip(g) {
            *p += weights.lambda_c * gc;
        }
    }
    if downsample {
        pixel = ImageRgb::downsample2_adjoint(&pixel, cam.width, cam.height);
    }
    let grad = image_grad_backprop(&pixel, cam, grid, spec, with_density)?;
    Ok((ViewLoss { feat, color }, grad))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub frozen_content: bool,
    pub loss_ref: f64,
    pub loss_feat: f64,
    pub loss_color: f64,
    /// Weighted objective with the weights active in this epoch.
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StyleLog {
    pub dictionary: DictStats,
    pub pseudo_rays: usize,
    pub reference_pseudo_rays: usize,
    pub steps: usize,
    /// Objective of the first step, before any update.
    pub initial_total: f64,
    pub epochs: Vec<EpochLog>,
}

impl StyleLog {
    pub fn write_json(&self, w: impl std::io::Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Internal(format!("training log: {e}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleOptions {
    pub dictionary: DictConfig,
    pub weights: LossWeights,
    pub style: StyleConfig,
}

/// Everything the optimizer derives from the references before the first step.
pub struct Preparation {
    pub pseudo_rays: PseudoRaySet,
    pub dictionary: DictStats,
    pub reference_contents: Vec<ImageRgb>,
}

/// Builds the reference dictionary from `omega_p` and registers the reference and
/// training cameras. References get view ids `0..refs.len()`, training cameras follow.
pub fn prepare(
    omega_p: &VoxelGrid,
    refs: &[StyleReference],
    cameras: &[Camera],
    dict_config: &DictConfig,
    spec: &SampleSpec,
) -> Result<Preparation> {
    if refs.is_empty() {
        return Err(Error::input("stylization needs at least one reference view"));
    }
    let refs: Vec<StyleReference> = refs
        .iter()
        .map(|r| StyleReference {
            mask: r.mask.as_ref().map(|m| erode_mask(m, dict_config.mask_erosion_radius)),
            ..r.clone()
        })
        .collect();
    let dict = build_dictionary(omega_p, &refs, spec, dict_config)?;
    let r = refs.len() as u32;
    let views: Vec<(u32, &Camera)> = refs
        .iter()
        .enumerate()
        .map(|(i, x)| (i as u32, &x.camera))
        .chain(cameras.iter().enumerate().map(|(i, c)| (r + i as u32, c)))
        .collect();
    let pseudo_rays = collect_pseudo_rays(&dict, omega_p, &views, spec);
    let reference_contents = refs.iter().map(|x| render_view(omega_p, &x.camera, spec)).collect();
    Ok(Preparation {
        pseudo_rays,
        dictionary: dict.stats.clone(),
        reference_contents,
    })
}

/// TCM supervision of every camera with `content_gen` as the content generator.
/// Color targets are only computed, and `deep` only queried, when `with_color` is set.
#[allow(clippy::too_many_arguments)]
pub fn build_view_guidance(
    content_gen: &VoxelGrid,
    refs: &[StyleReference],
    cameras: &[Camera],
    mid: &BuiltinDescriptor,
    deep: Option<&dyn FeatureExtractor>,
    with_color: bool,
    config: &StyleConfig,
    spec: &SampleSpec,
) -> Result<Vec<ViewGuidance>> {
    let ds = config.downsample;
    let ref_content: Vec<ImageRgb> = refs
        .iter()
        .map(|r| working_image(render_view(content_gen, &r.camera, spec), ds))
        .collect();
    let ref_style: Vec<ImageRgb> = refs.iter().map(|r| working_image(r.style.clone(), ds)).collect();
    let pairs: Vec<(&ImageRgb, &ImageRgb)> = ref_content.iter().zip(&ref_style).collect();
    let coarse = BuiltinDescriptor::coarse();
    let deep = deep.unwrap_or(&coarse);
    // Coarse template cells only feed color targets; without them the built-in
    // descriptor keeps external maps from being queried on unseen renders.
    let template = Template::build(&pairs, mid, if with_color { deep } else { &coarse })?;
    cameras
        .iter()
        .map(|cam| {
            let img = working_image(render_view(content_gen, cam, spec), ds);
            let content = mid.extract(&img)?;
            let (_, guidance) = template.guidance(&content)?;
            let color_targets = if with_color {
                Some(template.color_targets(&deep.extract(&img)?, config.color_gate)?)
            } else {
                None
            };
            Ok(ViewGuidance {
                camera: cam.clone(),
                content,
                guidance,
                color_targets,
            })
        })
        .collect()
}

fn sample_batch<'a>(
    set: &'a PseudoRaySet,
    ref_pool: &[usize],
    other_pool: &[usize],
    config: &StyleConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a PseudoRay> {
    let b = config.pseudo_ray_batch;
    let mut n_ref = (config.ref_fraction * b as f64).round() as usize;
    if other_pool.is_empty() {
        n_ref = b;
    } else if ref_pool.is_empty() {
        n_ref = 0;
    }
    let mut out = Vec::with_capacity(b);
    for k in 0..b {
        let pool = if k < n_ref { ref_pool } else { other_pool };
        out.push(&set.items[pool[rng.random_range(0..pool.len())]]);
    }
    out
}

/// Full stylization of `omega_p` from `refs` over the training `cameras`.
///
/// `deep` supplies the features used for color matching; the built-in coarse
/// descriptor is used when it is `None`. The feature loss always uses the built-in
/// mid-level descriptor, which can be differentiated.
pub fn stylize(
    omega_p: &VoxelGrid,
    refs: &[StyleReference],
    cameras: &[Camera],
    options: &StyleOptions,
    spec: &SampleSpec,
    deep: Option<&dyn FeatureExtractor>,
) -> Result<(VoxelGrid, StyleLog)> {
    let config = &options.style;
    config.validate()?;
    options.weights.validate()?;
    spec.validate()?;
    omega_p.validate()?;
    if cameras.is_empty() {
        return Err(Error::input("stylization needs at least one training camera"));
    }
    let prep = prepare(omega_p, refs, cameras, &options.dictionary, spec)?;
    let set = &prep.pseudo_rays;
    if set.is_empty() {
        return Err(Error::EmptyPseudoRays);
    }
    let ref_pool = set.reference_items();
    let other_pool = set.other_items();
    let mut log = StyleLog {
        dictionary: prep.dictionary.clone(),
        pseudo_rays: set.len(),
        reference_pseudo_rays: ref_pool.len(),
        ..Default::default()
    };
    log::info!(
        "registered {} pseudo-rays ({} on reference cameras)",
        set.len(),
        ref_pool.len()
    );

    let mid = BuiltinDescriptor::mid();
    let with_density = !config.freeze_density;
    let mut grid = omega_p.clone();
    let mut views = build_view_guidance(omega_p, refs, cameras, &mid, deep, true, config, spec)?;
    let mut opt = GridAdam::new(grid.voxel_count(), AdamParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..cameras.len()).collect();

    for epoch in 0..config.epochs {
        let frozen = epoch >= config.frozen_content_epoch;
        if frozen && epoch == config.frozen_content_epoch {
            log::info!("epoch {epoch}: freezing the stylized field as content generator");
            let snapshot = grid.clone();
            views = build_view_guidance(&snapshot, refs, cameras, &mid, deep, false, config, spec)?;
        }
        let weights = if frozen {
            LossWeights {
                lambda_f: config.frozen_lambda_f,
                lambda_prime: 0.0,
                lambda_c: 0.0,
                ..options.weights
            }
        } else {
            options.weights
        };

        order.sort_unstable();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut entry = EpochLog {
            epoch,
            frozen_content: frozen,
            ..Default::default()
        };
        for &v in &order {
            let batch = sample_batch(set, &ref_pool, &other_pool, config, &mut rng);
            let (l_ref, g_ref) = loss_ref_grad(&grid, &batch, spec, with_density)?;
            let (vl, mut grad) =
                view_loss_grad(&grid, &views[v], &mid, &weights, config.downsample, spec, with_density)?;
            grad.add_scaled(&g_ref, weights.lambda_r);
            let total = weights.lambda_r * l_ref + weights.lambda_f * vl.feat + weights.lambda_c * vl.color;
            if !total.is_finite() || grad.max_abs().is_nan() {
                return Err(Error::Divergence {
                    iteration: log.steps,
                    loss: total,
                });
            }
            if log.steps == 0 {
                log.initial_total = total;
            }
            let density_lr = with_density.then_some(config.learning_rate);
            opt.step(&mut grid, &grad, config.learning_rate, density_lr);
            log.steps += 1;
            entry.loss_ref += l_ref;
            entry.loss_feat += vl.feat;
            entry.loss_color += vl.color;
            entry.total += total;
        }
        let n = order.len() as f64;
        entry.loss_ref /= n;
        entry.loss_feat /= n;
        entry.loss_color /= n;
        entry.total /= n;
        log::info!(
            "style epoch {epoch}: ref {:.6} feat {:.6} color {:.6}",
            entry.loss_ref,
            entry.loss_feat,
            entry.loss_color
        );
        log.epochs.push(entry);
    }
    Ok((grid, log))
}
