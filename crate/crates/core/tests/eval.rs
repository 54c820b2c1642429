mod common;

use common::*;
use refnpr_core::eval::*;
use refnpr_core::tcm::BuiltinDescriptor;
use refnpr_core::*;

fn spec() -> SampleSpec {
    SampleSpec {
        step_size: 0.05,
        max_samples: 200,
        sigma_z: 0.8,
    }
}

#[test]
fn protocol_with_exact_restylization_hits_the_cap() {
    let mut r = rng(1);
    let grid = random_grid(&mut r, [6, 6, 6], 5.0);
    let refs: Vec<Camera> = (0..2).map(|_| random_camera(&mut r, 16)).collect();
    let path: Vec<Camera> = (0..3).map(|_| random_camera(&mut r, 16)).collect();
    let d = BuiltinDescriptor::mid();
    let report = robustness_protocol(&grid, &refs, &path, |_, _| Ok(grid.clone()), &spec(), Some((&d, 2))).unwrap();
    assert_eq!(report.per_view_psnr(), vec![Some(PSNR_CAP); 2]);
    assert_eq!(report.mean_psnr, Some(PSNR_CAP));
    for v in &report.views {
        assert!(v.ref_similarity.unwrap() >= 0.0);
    }
}

#[test]
fn failing_view_is_recorded_and_skipped() {
    let mut r = rng(2);
    let grid = random_grid(&mut r, [6, 6, 6], 5.0);
    let refs: Vec<Camera> = (0..3).map(|_| random_camera(&mut r, 8)).collect();
    let path = vec![random_camera(&mut r, 8)];
    let mut calls = 0;
    let report = robustness_protocol(
        &grid,
        &refs,
        &path,
        |_, _| {
            calls += 1;
            if calls == 2 {
                Err(Error::EmptyPseudoRays)
            } else {
                Ok(grid.clone())
            }
        },
        &spec(),
        None,
    )
    .unwrap();
    assert_eq!(report.views.len(), 3);
    assert!(report.views[1].psnr.is_none());
    assert!(report.views[1].error.as_deref().unwrap().contains("pseudo-rays"));
    assert_eq!(report.mean_psnr, Some(PSNR_CAP));
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
    let mut json = Vec::new();
    report.write_json(&mut json).unwrap();
    let back: EvalReport = serde_json::from_slice(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn protocol_rejects_empty_inputs() {
    let mut r = rng(3);
    let grid = random_grid(&mut r, [4, 4, 4], 5.0);
    let cam = random_camera(&mut r, 8);
    let ok = |_: &Camera, _: &ImageRgb| Ok(grid.clone());
    assert_eq!(
        robustness_protocol(&grid, &[], std::slice::from_ref(&cam), ok, &spec(), None)
            .unwrap_err()
            .category(),
        "input"
    );
    assert_eq!(
        robustness_protocol(&grid, &[cam], &[], ok, &spec(), None)
            .unwrap_err()
            .category(),
        "input"
    );
}

#[test]
fn similarity_of_the_reference_to_itself_is_zero() {
    let mut r = rng(4);
    let grid = random_grid(&mut r, [6, 6, 6], 5.0);
    let cam = random_camera(&mut r, 16);
    let other = random_camera(&mut r, 16);
    let img = render_view(&grid, &cam, &spec());
    let far = render_view(&grid, &other, &spec());
    let d = BuiltinDescriptor::mid();
    let views = [(&other, &far), (&cam, &img)];
    // k = 1 picks the view at the reference camera itself.
    assert!(ref_similarity(&views, (&cam, &img), 1, &d).unwrap() < 1e-12);
    assert!(ref_similarity(&views, (&cam, &img), 5, &d).unwrap() >= 0.0);
    assert!(ref_similarity(&[], (&cam, &img), 1, &d).is_err());
}

#[test]
fn psnr_of_a_known_offset() {
    let a = ImageRgb::filled(3, 3, Rgb::repeat(0.2));
    let b = ImageRgb::filled(3, 3, Rgb::repeat(0.21));
    assert!((psnr(&a, &b).unwrap() - 40.0).abs() < 1e-9);
}
