mod common;

use common::*;
use refnpr_core::dataset::{load_cameras, load_dataset, save_dataset, Dataset};
use refnpr_core::fit::*;
use refnpr_core::toy::{self, ToyConfig};
use refnpr_core::*;

fn tiny() -> (toy::ToyScene, VoxelGrid) {
    let config = ToyConfig {
        resolution: 12,
        image_size: 24,
        train_views: 8,
        test_views: 2,
        ..Default::default()
    };
    let scene = toy::generate(&config, &SampleSpec::default()).unwrap();
    let init = toy::initial_grid(&config).unwrap();
    (scene, init)
}

#[test]
fn frozen_density_is_bit_identical() {
    let (scene, init) = tiny();
    let cfg = FitConfig {
        epochs: 2,
        optimize_density: false,
        ..Default::default()
    };
    let (g, _) = fit_photoreal(&scene.train, &init, &cfg, &SampleSpec::default()).unwrap();
    assert_eq!(g.density, init.density);
    assert_ne!(g.color, init.color);
    assert!(g.color.iter().all(|c| c.iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn loss_decreases_and_runs_are_reproducible() {
    let (scene, init) = tiny();
    let cfg = FitConfig {
        epochs: 4,
        ..Default::default()
    };
    let (a, ra) = fit_photoreal(&scene.train, &init, &cfg, &SampleSpec::default()).unwrap();
    let (b, rb) = fit_photoreal(&scene.train, &init, &cfg, &SampleSpec::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert!(ra.epoch_loss.last().unwrap() < ra.epoch_loss.first().unwrap());
}

#[test]
fn single_view_loss_falls_over_first_hundred_steps() {
    let (scene, init) = tiny();
    let one = Dataset {
        cameras: vec![scene.train.cameras[0].clone()],
        images: vec![scene.train.images[0].clone()],
        masks: None,
    };
    // One batch covers the whole view, so every epoch is a single step.
    let cfg = FitConfig {
        epochs: 100,
        batch_rays: 24 * 24,
        ..Default::default()
    };
    let (_, report) = fit_photoreal(&one, &init, &cfg, &SampleSpec::default()).unwrap();
    assert_eq!(report.steps, 100);
    let l = &report.epoch_loss;
    for w in l.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "{} -> {}", w[0], w[1]);
    }
    assert!(l[99] < 0.5 * l[0]);
}

#[test]
fn photometric_gradient_matches_finite_differences() {
    let mut r = rng(5);
    let grid = random_grid(&mut r, [5, 5, 5], 4.0);
    let rays: Vec<Ray> = (0..16).map(|_| random_ray(&mut r)).collect();
    let targets: Vec<Rgb> = (0..16).map(|i| Rgb::repeat(i as f64 / 16.0)).collect();
    let spec = SampleSpec {
        step_size: 0.05,
        max_samples: 200,
        sigma_z: 0.8,
    };
    let (l, g) = photometric_loss_grad(&grid, &rays, &targets, &spec, true).unwrap();
    assert!((l - photometric_loss(&grid, &rays, &targets, &spec).unwrap()).abs() < 1e-12);
    let h = 1e-6;
    for idx in [0, 31, 62, 124] {
        for c in 0..3 {
            let mut a = grid.clone();
            a.color[idx][c] += h;
            let mut b = grid.clone();
            b.color[idx][c] -= h;
            let num = (photometric_loss(&a, &rays, &targets, &spec).unwrap()
                - photometric_loss(&b, &rays, &targets, &spec).unwrap())
                / (2.0 * h);
            assert!(
                (num - g.color[idx][c]).abs() <= 1e-4 * num.abs().max(1e-4),
                "color {idx}/{c}: {num} vs {}",
                g.color[idx][c]
            );
        }
        if grid.density[idx] > 1e-3 {
            let mut a = grid.clone();
            a.density[idx] += h;
            let mut b = grid.clone();
            b.density[idx] -= h;
            let num = (photometric_loss(&a, &rays, &targets, &spec).unwrap()
                - photometric_loss(&b, &rays, &targets, &spec).unwrap())
                / (2.0 * h);
            assert!(
                (num - g.density[idx]).abs() <= 1e-4 * num.abs().max(1e-4),
                "density {idx}: {num} vs {}",
                g.density[idx]
            );
        }
    }
}

#[test]
fn bad_step_sizes_are_rejected() {
    let (scene, init) = tiny();
    for cfg in [
        FitConfig {
            learning_rate: f64::INFINITY,
            ..Default::default()
        },
        FitConfig {
            final_lr_fraction: 0.0,
            ..Default::default()
        },
        FitConfig {
            epochs: 0,
            ..Default::default()
        },
    ] {
        let err = fit_photoreal(&scene.train, &init, &cfg, &SampleSpec::default()).unwrap_err();
        assert_eq!(err.category(), "input");
    }
}

#[test]
fn dataset_directory_roundtrip() {
    let (scene, _) = tiny();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), "r", &scene.train.cameras, &scene.train.images).unwrap();
    let (ds, names) = load_dataset(dir.path()).unwrap();
    assert_eq!(names[3], "r_3");
    assert_eq!(ds.len(), scene.train.len());
    assert!(ds.masks.is_none());
    for (a, b) in ds.cameras.iter().zip(&scene.train.cameras) {
        assert!((a.center() - b.center()).norm() < 1e-9);
        assert!((a.rotation - b.rotation).abs().max() < 1e-9);
        assert!((a.fx - b.fx).abs() < 1e-9);
    }
    for (a, b) in ds.images.iter().zip(&scene.train.images) {
        assert!(a
            .data
            .iter()
            .zip(&b.data)
            .all(|(p, q)| (p - q).abs().max() <= 0.5 / 255.0 + 1e-12));
    }
    let cams = load_cameras(dir.path(), 24, 24).unwrap();
    assert_eq!(cams.len(), ds.len());
    let text = std::fs::read_to_string(dir.path().join("transforms.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["camera_angle_x"].as_f64().unwrap() > 0.0);
    assert_eq!(v["frames"][0]["file_path"], "./r_0");
}

#[test]
fn bad_dataset_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap_err().category(), "io");
    std::fs::write(dir.path().join("transforms.json"), "{\"frames\": 3}").unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap_err().category(), "format");
    let (scene, _) = tiny();
    let ds = Dataset {
        cameras: scene.train.cameras.clone(),
        images: scene.train.images[..2].to_vec(),
        masks: None,
    };
    assert_eq!(ds.validate().unwrap_err().category(), "input");
}
