//! PSNR, the re-stylization robustness protocol and a descriptor-based similarity to
//! the stylized reference.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::grid::VoxelGrid;
use crate::image::{ImageRgb, MaskImage};
use crate::par;
use crate::render::{render_view, SampleSpec};
use crate::tcm::{cosine_distance, FeatureExtractor};

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn check_dims(a: &ImageRgb, b: &ImageRgb) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::input(format!(
            "psnr of a {}x{} and a {}x{} image",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over all channels of `[0, 1]` images.
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).norm_squared()).sum();
    Ok(psnr_from_mse(sum / (3 * a.data.len()) as f64))
}

/// PSNR restricted to pixels where `mask` is set. `None` if the mask is empty.
pub fn psnr_masked(a: &ImageRgb, b: &ImageRgb, mask: &MaskImage) -> Result<Option<f64>> {
    check_dims(a, b)?;
    if (mask.width, mask.height) != (a.width, a.height) {
        return Err(Error::input("psnr mask does not match the image size"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((x, y), &m) in a.data.iter().zip(&b.data).zip(&mask.data) {
        if m {
            sum += (x - y).norm_squared();
            n += 3;
        }
    }
    Ok((n > 0).then(|| psnr_from_mse(sum / n as f64)))
}

/// Mean cell-wise cosine feature distance between the `k` views whose cameras are
/// closest to the reference camera and the stylized reference itself.
pub fn ref_similarity(
    views: &[(&Camera, &ImageRgb)],
    reference: (&Camera, &ImageRgb),
    k: usize,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    if views.is_empty() || k == 0 {
        return Err(Error::input("reference similarity needs at least one view and k >= 1"));
    }
    if views.len() < k {
        log::warn!("only {} views available for the {k} nearest; using all", views.len());
    }
    let (ref_cam, ref_img) = reference;
    let center = ref_cam.center();
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (views[a].0.center() - center).norm();
        let db = (views[b].0.center() - center).norm();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order.truncate(k);
    let ref_f = extractor.extract(ref_img)?;
    let mut total = 0.0;
    for &i in &order {
        let f = extractor.extract(views[i].1)?;
        if !f.same_shape(&ref_f) {
            return Err(Error::input("reference similarity needs views of the reference's size"));
        }
        let d: f64 = (0..f.cells()).map(|c| cosine_distance(f.cell(c), ref_f.cell(c))).sum();
        total += d / f.cells() as f64;
    }
    Ok(total / order.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewEval {
    pub view: usize,
    /// Mean PSNR over the camera path; absent when stylization failed.
    pub psnr: Option<f64>,
    pub ref_similarity: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewEval>,
    /// Mean over views that completed.
    pub mean_psnr: Option<f64>,
    /// Effective configuration echoed back by the caller.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn per_view_psnr(&self) -> Vec<Option<f64>> {
        self.views.iter().map(|v| v.psnr).collect()
    }

    fn update_mean(&mut self) {
        let ok: Vec<f64> = self.views.iter().filter_map(|v| v.psnr).collect();
        self.mean_psnr = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Internal(format!("eval report: {e}")))
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "view,psnr,ref_similarity,error")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for v in &self.views {
            let err = v.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
            writeln!(w, "{},{},{},\"{}\"", v.view, opt(v.psnr), opt(v.ref_similarity), err)?;
        }
        Ok(())
    }
}

/// Robustness of a stylized field to its own renders.
///
/// Every camera in `references` renders `omega_np`; `stylize_fn` re-stylizes using
/// that render as the reference; the new field renders `path`, which is compared
/// against `omega_np`'s renders of the same path. A failing re-stylization is
/// recorded for its view and the protocol moves on. When `similarity` is given, the
/// `k` path views nearest the reference are also scored against it.
pub fn robustness_protocol<F>(
    omega_np: &VoxelGrid,
    references: &[Camera],
    path: &[Camera],
    mut stylize_fn: F,
    spec: &SampleSpec,
    similarity: Option<(&dyn FeatureExtractor, usize)>,
) -> Result<EvalReport>
where
    F: FnMut(&Camera, &ImageRgb) -> Result<VoxelGrid>,
{
    omega_np.validate()?;
    if references.is_empty() {
        return Err(Error::input("robustness protocol needs at least one reference camera"));
    }
    if path.is_empty() {
        return Err(Error::input("robustness protocol needs a non-empty camera path"));
    }
    let baseline = par::map_collect(path, |c| render_view(omega_np, c, spec));
    let mut report = EvalReport::default();
    for (view, cam) in references.iter().enumerate() {
        let style = render_view(omega_np, cam, spec);
        let mut entry = ViewEval {
            view,
            ..Default::default()
        };
        match stylize_fn(cam, &style) {
            Ok(field) => {
                let renders = par::map_collect(path, |c| render_view(&field, c, spec));
                let mut sum = 0.0;
                for (a, b) in renders.iter().zip(&baseline) {
                    sum += psnr(a, b)?;
                }
                entry.psnr = Some(sum / path.len() as f64);
                if let Some((extractor, k)) = similarity {
                    let pairs: Vec<(&Camera, &ImageRgb)> = path.iter().zip(&renders).collect();
                    entry.ref_similarity = Some(ref_similarity(&pairs, (cam, &style), k, extractor)?);
                }
            }
            Err(e) => {
                log::warn!("robustness view {view}: stylization failed: {e}");
                entry.error = Some(e.to_string());
            }
        }
        report.views.push(entry);
    }
    report.update_mean();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Rgb;

    #[test]
    fn psnr_closed_forms() {
        let a = ImageRgb::filled(4, 4, Rgb::repeat(0.5));
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = ImageRgb::filled(4, 4, Rgb::repeat(0.6));
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &ImageRgb::new(2, 2)).is_err());
    }

    #[test]
    fn masked_psnr_ignores_unmasked_pixels() {
        let a = ImageRgb::filled(2, 1, Rgb::repeat(0.5));
        let mut b = a.clone();
        b.set(1, 0, Rgb::zeros());
        let mut m = MaskImage::new(2, 1, false);
        assert_eq!(psnr_masked(&a, &b, &m).unwrap(), None);
        m.data[0] = true;
        assert_eq!(psnr_masked(&a, &b, &m).unwrap(), Some(PSNR_CAP));
    }

    #[test]
    fn csv_has_one_row_per_view() {
        let mut r = EvalReport {
            views: vec![
                ViewEval {
                    view: 0,
                    psnr: Some(30.0),
                    ..Default::default()
                },
                ViewEval {
                    view: 1,
                    error: Some("boom".into()),
                    ..Default::default()
                },
            ],
            ..Default::default()
        };
        r.update_mean();
        assert_eq!(r.mean_psnr, Some(30.0));
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("1,,,\"boom\""));
    }
}
