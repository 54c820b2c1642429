use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use refnpr_core::dataset::{self, frame_image_path, Dataset};
use refnpr_core::eval::{psnr, robustness_protocol};
use refnpr_core::fit::fit_photoreal;
use refnpr_core::registration::StyleReference;
use refnpr_core::style::{self, StyleLog};
use refnpr_core::tcm::{BuiltinDescriptor, FeatureExtractor, FeatureMap, PrecomputedFeatures};
use refnpr_core::{render_depth, render_view, toy, Camera, VoxelGrid};
use serde_json::{json, Value};

use crate::config::{ExtractorKind, RunConfig};
use crate::error::CliError;
use crate::features::load_external;
use crate::{EvalArgs, FitArgs, RegisterArgs, RenderArgs, StylizeArgs};

fn required(flag: Option<&PathBuf>, fallback: Option<&PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or(fallback)
        .cloned()
        .ok_or_else(|| CliError::input(format!("--{name} is required (or set paths.{name})")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("internal", e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Cameras of a transforms.json directory, with its images when they exist. Paths
/// without images need `size` for the square image dimensions.
struct Views {
    cameras: Vec<Camera>,
    names: Vec<String>,
    dataset: Option<Dataset>,
}

fn load_views(dir: &Path, size: Option<usize>) -> Result<Views, CliError> {
    let tf = dataset::read_transforms(dir)?;
    let has_images = tf.frames.first().is_some_and(|f| frame_image_path(dir, f).exists());
    if has_images {
        let (ds, names) = dataset::load_dataset(dir)?;
        return Ok(Views {
            cameras: ds.cameras.clone(),
            names,
            dataset: Some(ds),
        });
    }
    let Some(s) = size else {
        return Err(CliError::input(format!(
            "{} has no images to size the cameras; pass --size",
            dir.display()
        )));
    };
    let cameras = dataset::load_cameras(dir, s, s)?;
    if cameras.is_empty() {
        return Err(CliError::input(format!("{} lists no cameras", dir.display())));
    }
    let names = (0..cameras.len()).map(|i| format!("view_{i}")).collect();
    Ok(Views {
        cameras,
        names,
        dataset: None,
    })
}

fn load_refs(dir: &Path) -> Result<Vec<StyleReference>, CliError> {
    let (ds, _) = dataset::load_dataset(dir)?;
    let masks = ds.masks.clone();
    Ok(ds
        .cameras
        .into_iter()
        .zip(ds.images)
        .enumerate()
        .map(|(i, (camera, style))| StyleReference {
            camera,
            style,
            mask: masks.as_ref().map(|m| m[i].clone()),
        })
        .collect())
}

fn deep_extractor(cfg: &RunConfig) -> Result<Option<PrecomputedFeatures>, CliError> {
    match (cfg.extractor.kind, &cfg.extractor.features) {
        (ExtractorKind::External, Some(dir)) => Ok(Some(load_external(dir)?)),
        _ => Ok(None),
    }
}

pub fn gen_toy(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let scene = toy::generate(&cfg.toy, &cfg.sample)?;
    create_dir(out)?;
    dataset::save_dataset(out.join("train"), "r", &scene.train.cameras, &scene.train.images)?;
    dataset::save_dataset(out.join("test"), "r", &scene.test.cameras, &scene.test.images)?;
    scene.grid.save(out.join("ground_truth.rnvg"))?;

    // Suggested settings for this scene: a grid matching the toy resolution and a
    // dictionary fine enough for its surfaces, but not finer than the renders resolve.
    let mut suggested = cfg.clone();
    suggested.grid.resolution = [cfg.toy.resolution; 3];
    suggested.dictionary.resolution = 64;
    let path = out.join("config.toml");
    std::fs::write(&path, suggested.to_toml()).map_err(|e| CliError::io(&path, e))?;
    println!(
        "toy scene: {} train and {} test views at {}px in {}",
        scene.train.len(),
        scene.test.len(),
        cfg.toy.image_size,
        out.display()
    );
    Ok(())
}

pub fn fit(cfg: &RunConfig, a: &FitArgs) -> Result<(), CliError> {
    let dir = required(a.dataset.as_ref(), cfg.paths.dataset.as_ref(), "dataset")?;
    let (train, _) = dataset::load_dataset(&dir)?;
    let init = match &a.init {
        Some(p) => VoxelGrid::load(p)?,
        None => cfg.grid.build()?,
    };
    let (grid, report) = fit_photoreal(&train, &init, &cfg.fit, &cfg.sample)?;
    // Scores are taken on the grid as stored, so they match a later `render`.
    let grid = grid.quantized_f32();
    grid.save(&a.out)?;
    let train_psnr = score(&grid, &train, cfg)?;
    let test = match a.test.as_ref().or(cfg.paths.test.as_ref()) {
        Some(t) => {
            let (ds, _) = dataset::load_dataset(t)?;
            let per = score(&grid, &ds, cfg)?;
            Some(json!({ "mean_psnr": mean(&per), "per_view_psnr": per }))
        }
        None => None,
    };
    println!(
        "fit: {} steps, final loss {:.6}, train PSNR {:.2} dB",
        report.steps,
        report.epoch_loss.last().copied().unwrap_or(f64::NAN),
        mean(&train_psnr).unwrap_or(f64::NAN)
    );
    if let Some(path) = &a.report {
        write_json(
            path,
            &json!({
                "command": "fit",
                "config": cfg.to_json(),
                "epoch_loss": report.epoch_loss,
                "steps": report.steps,
                "train_mean_psnr": mean(&train_psnr),
                "test": test,
            }),
        )?;
    }
    Ok(())
}

fn score(grid: &VoxelGrid, ds: &Dataset, cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    ds.cameras
        .iter()
        .zip(&ds.images)
        .map(|(c, img)| Ok(psnr(&render_view(grid, c, &cfg.sample), img)?))
        .collect()
}

pub fn render(cfg: &RunConfig, a: &RenderArgs) -> Result<(), CliError> {
    let grid = VoxelGrid::load(required(a.grid.as_ref(), cfg.paths.grid.as_ref(), "grid")?)?;
    let cam_dir = required(a.cameras.as_ref(), cfg.paths.cameras.as_ref(), "cameras")?;
    let views = load_views(&cam_dir, a.size)?;
    if a.compare && views.dataset.is_none() {
        return Err(CliError::input("--compare needs images next to the cameras"));
    }
    let images: Vec<_> = views
        .cameras
        .iter()
        .map(|c| render_view(&grid, c, &cfg.sample))
        .collect();
    dataset::save_dataset(&a.out, "r", &views.cameras, &images)?;
    if a.depth {
        for (i, c) in views.cameras.iter().enumerate() {
            let d = render_depth(&grid, c, &cfg.sample);
            d.to_image().save_png(a.out.join(format!("depth_{i}.png")))?;
            let mut map = FeatureMap::zeros(d.height, d.width, 1, 1, (d.height, d.width));
            for (v, px) in map.data.iter_mut().zip(&d.data) {
                *v = px.unwrap_or(-1.0);
            }
            map.save(a.out.join(format!("depth_{i}.rnfm")))?;
        }
    }
    if a.compare {
        let ds = views.dataset.as_ref().expect("checked above");
        let per: Vec<f64> = images
            .iter()
            .zip(&ds.images)
            .map(|(r, gt)| psnr(r, gt))
            .collect::<Result<_, _>>()?;
        let m = mean(&per);
        println!(
            "render: {} views, mean PSNR {:.2} dB",
            images.len(),
            m.unwrap_or(f64::NAN)
        );
        let rows: Vec<Value> = views
            .names
            .iter()
            .zip(&per)
            .map(|(n, p)| json!({ "name": n, "psnr": p }))
            .collect();
        write_json(
            &a.out.join("report.json"),
            &json!({ "command": "render", "config": cfg.to_json(), "views": rows, "mean_psnr": m }),
        )?;
    } else {
        println!("render: {} views in {}", images.len(), a.out.display());
    }
    Ok(())
}

pub fn register(cfg: &RunConfig, a: &RegisterArgs) -> Result<(), CliError> {
    let grid = VoxelGrid::load(required(a.grid.as_ref(), cfg.paths.grid.as_ref(), "grid")?)?;
    let refs = load_refs(&required(a.refs.as_ref(), cfg.paths.refs.as_ref(), "refs")?)?;
    let cam_dir = required(a.cameras.as_ref(), cfg.paths.cameras.as_ref(), "cameras")?;
    let views = load_views(&cam_dir, a.size)?;
    let prep = style::prepare(&grid, &refs, &views.cameras, &cfg.dictionary, &cfg.sample)?;
    let set = &prep.pseudo_rays;
    if let Some(path) = &a.debug_csv {
        let w = writer(path)?;
        set.write_debug_csv(w).map_err(|e| CliError::io(path, e))?;
    }
    let r = refs.len();
    let rows: Vec<Value> = (0..r)
        .map(|i| (i, "reference", format!("ref_{i}")))
        .chain(
            views
                .names
                .iter()
                .enumerate()
                .map(|(i, n)| (r + i, "camera", n.clone())),
        )
        .map(|(v, role, name)| {
            let v32 = v as u32;
            json!({
                "view": v,
                "role": role,
                "name": name,
                "registered": set.by_view.get(&v32).map_or(0, Vec::len),
                "surface_rays": set.surface.get(&v32).copied().unwrap_or(0),
                "rate": set.registration_rate(v32),
            })
        })
        .collect();
    println!(
        "register: {} dictionary rays, {} pseudo-rays, reference self-rate {:.1}%",
        prep.dictionary.inserted,
        set.len(),
        100.0 * set.registration_rate(0)
    );
    write_json(
        &a.report,
        &json!({
            "command": "register",
            "config": cfg.to_json(),
            "dictionary": prep.dictionary,
            "pseudo_rays": set.len(),
            "reference_pseudo_rays": set.reference_items().len(),
            "views": rows,
        }),
    )?;
    if set.is_empty() {
        return Err(refnpr_core::Error::EmptyPseudoRays.into());
    }
    Ok(())
}

pub fn stylize(cfg: &RunConfig, a: &StylizeArgs) -> Result<(), CliError> {
    let grid = VoxelGrid::load(required(a.grid.as_ref(), cfg.paths.grid.as_ref(), "grid")?)?;
    let refs = load_refs(&required(a.refs.as_ref(), cfg.paths.refs.as_ref(), "refs")?)?;
    let cam_dir = required(a.cameras.as_ref(), cfg.paths.cameras.as_ref(), "cameras")?;
    let views = load_views(&cam_dir, a.size)?;
    let deep = deep_extractor(cfg)?;
    let (out, log) = style::stylize(
        &grid,
        &refs,
        &views.cameras,
        &cfg.style_options(),
        &cfg.sample,
        deep.as_ref().map(|d| d as &dyn FeatureExtractor),
    )?;
    out.save(&a.out)?;
    print_style_log(&log);
    if let Some(path) = &a.log {
        let log = serde_json::to_value(&log).map_err(|e| CliError::new("internal", e.to_string()))?;
        write_json(
            path,
            &json!({ "command": "stylize", "config": cfg.to_json(), "log": log }),
        )?;
    }
    Ok(())
}

fn print_style_log(log: &StyleLog) {
    let last = log.epochs.last().map_or(f64::NAN, |e| e.total);
    println!(
        "stylize: {} pseudo-rays, {} steps, loss {:.5} -> {:.5}",
        log.pseudo_rays, log.steps, log.initial_total, last
    );
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs) -> Result<(), CliError> {
    let content = VoxelGrid::load(required(a.content.as_ref(), cfg.paths.grid.as_ref(), "content")?)?;
    let stylized = VoxelGrid::load(&a.stylized)?;
    let references = load_views(&a.references, a.size)?.cameras;
    let cameras = load_views(
        &required(a.cameras.as_ref(), cfg.paths.cameras.as_ref(), "cameras")?,
        a.size,
    )?
    .cameras;
    let path = load_views(&required(a.path.as_ref(), cfg.paths.path.as_ref(), "path")?, a.size)?.cameras;
    let deep = deep_extractor(cfg)?;
    let options = cfg.style_options();
    let mid = BuiltinDescriptor::mid();
    let similarity = cfg
        .eval
        .similarity
        .then_some((&mid as &dyn FeatureExtractor, cfg.eval.similarity_k));
    let mut report = robustness_protocol(
        &stylized,
        &references,
        &path,
        |cam, style_img| {
            let reference = StyleReference {
                camera: cam.clone(),
                style: style_img.clone(),
                mask: None,
            };
            let deep = deep.as_ref().map(|d| d as &dyn FeatureExtractor);
            style::stylize(&content, &[reference], &cameras, &options, &cfg.sample, deep).map(|(g, _)| g)
        },
        &cfg.sample,
        similarity,
    )?;
    report.config = cfg.to_json();
    report.write_json(writer(&a.report)?).map_err(CliError::from)?;
    if let Some(csv) = &a.csv {
        report.write_csv(writer(csv)?).map_err(|e| CliError::io(csv, e))?;
    }
    println!(
        "eval: {} reference views, mean PSNR {}",
        report.views.len(),
        report.mean_psnr.map_or("n/a".to_string(), |m| format!("{m:.2} dB"))
    );
    Ok(())
}
