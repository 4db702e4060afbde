use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use scenegraft::geometry::{CameraModel, Resolution, RigidTransform};
use scenegraft::pipeline::*;
use scenegraft::placement::RegionOfInterest;
use tempfile::TempDir;

fn small(scenes: usize) -> FixtureOptions {
    FixtureOptions { scenes, width: 160, height: 120, panorama_width: 128 }
}

fn fixture(kind: FixtureKind, scenes: usize, seed: u64) -> (TempDir, FixtureInfo) {
    let dir = TempDir::new().unwrap();
    let info = gen_fixture_with(kind, dir.path(), seed, &small(scenes)).unwrap();
    (dir, info)
}

fn config(info: &FixtureInfo, output: &str) -> RunConfig {
    let mut c = RunConfig::load(&info.config).unwrap();
    c.output = info.root.join(output);
    c
}

/// Relative path -> bytes for every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn without_timings(mut s: BTreeMap<PathBuf, Vec<u8>>) -> BTreeMap<PathBuf, Vec<u8>> {
    s.remove(Path::new(TIMINGS_FILE));
    s
}

#[test]
fn fixture_is_seed_stable() {
    let (_a, fa) = fixture(FixtureKind::SurroundFisheye, 2, 11);
    let (_b, fb) = fixture(FixtureKind::SurroundFisheye, 2, 11);
    let (_c, fc) = fixture(FixtureKind::SurroundFisheye, 2, 12);
    assert_eq!(snapshot(&fa.root), snapshot(&fb.root));
    assert_ne!(snapshot(&fa.root), snapshot(&fc.root));
}

/// Share of evenly spread sphere directions seen by some camera.
fn fibonacci_coverage(cameras: &[CameraModel], n: usize) -> f64 {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let seen = (0..n)
        .filter(|&i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let d = Vector3::new(r * (golden * i as f64).cos(), r * (golden * i as f64).sin(), z);
            cameras.iter().any(|c| c.project_direction(&d).is_some_and(|p| c.contains_pixel(&p)))
        })
        .count();
    seen as f64 / n as f64
}

#[test]
fn surround_rig_covers_more_than_ninety_percent() {
    let cams: Vec<CameraModel> = surround_fisheye_rig(512, 384).into_iter().map(|(_, c)| c).collect();
    assert_eq!(cams.len(), 4);
    let grid = rig_coverage(&cams, COVERAGE_GRID.0, COVERAGE_GRID.1);
    let oracle = fibonacci_coverage(&cams, 200_000);
    assert!((grid - oracle).abs() < 0.01, "grid {grid} oracle {oracle}");
    assert!(oracle > 0.9);
}

fn narrow_front_camera() -> CameraModel {
    // Pick the focal length whose rectangular frustum spans 8% of the sphere:
    // solid angle 4 asin(sin a sin b) with half-angles a, b.
    let (w, h) = (640.0, 480.0);
    let omega = |f: f64| 4.0 * ((320.0 / f).atan().sin() * (240.0 / f).atan().sin()).asin();
    let target = 0.08 * 4.0 * std::f64::consts::PI;
    let (mut lo, mut hi) = (10.0, 5000.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if omega(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let f = 0.5 * (lo + hi);
    CameraModel::pinhole(
        f,
        f,
        [w / 2.0, h / 2.0],
        Resolution { width: 640, height: 480 },
        RigidTransform::camera_mount(Vector3::new(2.0, 0.0, 1.5), 0.0, 0.0),
    )
    .unwrap()
}

fn single_camera_scene(dir: &Path, cam: Option<&CameraModel>, with_extrinsics: bool) -> SceneManifest {
    let cam = cam.cloned().unwrap_or_else(narrow_front_camera);
    fs::create_dir_all(dir).unwrap();
    image::RgbImage::new(cam.width(), cam.height()).save(dir.join("front.png")).unwrap();
    SceneManifest {
        schema_version: SCHEMA_VERSION,
        scene_id: "single".into(),
        ego_pose: RigidTransform::identity(),
        cameras: vec![CameraEntry {
            name: "front".into(),
            image: "front.png".into(),
            intrinsics: Some(cam.intrinsics().clone()),
            extrinsics: with_extrinsics.then(|| *cam.extrinsics()),
            depth: None,
            segmentation: None,
        }],
        labels: scenegraft::LabelSet::new(360),
    }
}

#[test]
fn narrow_front_camera_rejected_for_coverage() {
    let dir = TempDir::new().unwrap();
    let m = single_camera_scene(dir.path(), None, true);
    let cam = narrow_front_camera();
    let cov = rig_coverage(std::slice::from_ref(&cam), COVERAGE_GRID.0, COVERAGE_GRID.1);
    assert!((cov - 0.08).abs() < 0.005, "{cov}");
    match validate_input(&m, dir.path(), DEFAULT_COVERAGE_THRESHOLD) {
        Err(ValidationError::Rejected(r)) => assert_eq!(r.reason, RejectionReason::Coverage),
        other => panic!("expected coverage rejection, got {other:?}"),
    }
    assert!(validate_input(&m, dir.path(), 0.05).is_ok());
}

#[test]
fn missing_extrinsics_rejected_for_calibration() {
    let dir = TempDir::new().unwrap();
    let m = single_camera_scene(dir.path(), None, false);
    match validate_input(&m, dir.path(), 0.0) {
        Err(ValidationError::Rejected(r)) => assert_eq!(r.reason, RejectionReason::Calibration),
        other => panic!("expected calibration rejection, got {other:?}"),
    }
}

#[test]
fn missing_image_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let m = single_camera_scene(dir.path(), None, true);
    fs::remove_file(dir.path().join("front.png")).unwrap();
    assert!(matches!(validate_input(&m, dir.path(), 0.0), Err(ValidationError::Io(_))));
}

#[test]
fn no_cameras_rejected() {
    let dir = TempDir::new().unwrap();
    let mut m = single_camera_scene(dir.path(), None, true);
    m.cameras.clear();
    match validate_input(&m, dir.path(), 0.0) {
        Err(ValidationError::Rejected(r)) => assert_eq!(r.reason, RejectionReason::NoCameras),
        other => panic!("{other:?}"),
    }
}

#[test]
fn image_size_must_match_calibration() {
    let dir = TempDir::new().unwrap();
    let m = single_camera_scene(dir.path(), None, true);
    image::RgbImage::new(10, 10).save(dir.path().join("front.png")).unwrap();
    match validate_input(&m, dir.path(), 0.0) {
        Err(ValidationError::Rejected(r)) => assert_eq!(r.reason, RejectionReason::ImageSize),
        other => panic!("{other:?}"),
    }
}

#[test]
fn surround_fixture_validates() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 3, 1);
    let checked = load_dataset(&info.dataset, DEFAULT_COVERAGE_THRESHOLD).unwrap();
    assert_eq!(checked.len(), 3);
    for (v, s) in &checked {
        assert!(matches!(v.check, SceneCheck::Accepted { coverage } if coverage > 0.9), "{v:?}");
        assert_eq!(s.as_ref().unwrap().cameras.len(), 4);
    }
}

#[test]
fn parking_fixture_sets_availability() {
    let (_d, info) = fixture(FixtureKind::Parking, 4, 2);
    for (_, s) in load_dataset(&info.dataset, 0.6).unwrap() {
        let spots = &s.unwrap().manifest.labels.parking;
        assert_eq!(spots.len(), 8);
        assert!(spots.iter().any(|p| p.accepts_lock()));
        for p in spots {
            assert_eq!(p.polygon.len(), 4);
            assert!(p.available || p.lock_state.is_none());
        }
    }
}

#[test]
fn duplicate_scene_ids_rejected() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 2, 1);
    let copy = info.dataset.join("zz-copy");
    fs::create_dir_all(&copy).unwrap();
    for f in snapshot(&info.dataset.join(&info.scene_ids[0])).keys() {
        fs::copy(info.dataset.join(&info.scene_ids[0]).join(f), copy.join(f)).unwrap();
    }
    let checked = load_dataset(&info.dataset, 0.6).unwrap();
    let last = &checked.last().unwrap().0;
    assert!(matches!(&last.check, SceneCheck::Rejected { rejection } if rejection.reason == RejectionReason::DuplicateId));
}

#[test]
fn empty_dataset_gives_empty_report() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 0, 1);
    fs::create_dir_all(&info.dataset).unwrap();
    let report = run_batch(config(&info, "out"), false).unwrap();
    assert_eq!(report.scenes_total, 0);
    assert_eq!(report.assets_placed, 0);
    assert!(report.is_consistent());
    assert!(info.root.join("out").join(REPORT_FILE).is_file());
}

#[test]
fn unreadable_scene_is_skipped_with_reason() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 10, 4);
    fs::write(info.dataset.join(&info.scene_ids[3]).join("left.png"), b"not a png").unwrap();
    let report = run_batch(config(&info, "out"), false).unwrap();
    assert_eq!(report.scenes_total, 10);
    assert_eq!(report.scenes_processed, 9);
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].scene, info.scene_ids[3]);
    assert!(report.skipped[0].reason.starts_with("unreadable"), "{}", report.skipped[0].reason);
    assert!(report.is_consistent());
    assert!(!info.root.join("out").join(&info.scene_ids[3]).exists());
}

#[test]
fn output_collision_needs_overwrite() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 1, 4);
    run_batch(config(&info, "out"), false).unwrap();
    assert!(matches!(run_batch(config(&info, "out"), false), Err(PipelineError::OutputExists(_))));
    run_batch(config(&info, "out"), true).unwrap();
    let mut into_input = config(&info, "out");
    into_input.output = info.dataset.clone();
    assert!(run_batch(into_input, true).is_err());
    assert!(load_dataset(&info.dataset, 0.6).unwrap()[0].1.is_some());
}

#[test]
fn blocked_region_is_identity() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 3, 5);
    let mut cfg = config(&info, "out");
    // Every candidate lands on the ego vehicle.
    cfg.placement.region = RegionOfInterest::Rectangle { longitudinal: 0.3, lateral: 0.3 };
    let report = run_batch(cfg, false).unwrap();
    assert_eq!(report.assets_placed, 0);
    assert_eq!(report.scenes_processed, 3);
    let input = snapshot(&info.dataset);
    let output = snapshot(&info.root.join("out"));
    for (k, v) in &input {
        assert_eq!(output.get(k), Some(v), "{}", k.display());
    }
}

#[test]
fn output_dataset_revalidates_and_reruns() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 3, 6);
    let cfg = config(&info, "out");
    run_batch(cfg.clone(), false).unwrap();
    let out = info.root.join("out");
    let checked = load_dataset(&out, 0.6).unwrap();
    assert_eq!(checked.len(), 3);
    assert!(checked.iter().all(|(_, s)| s.is_some()));
    for (_, s) in &checked {
        let s = s.as_ref().unwrap();
        let original: SceneManifest = serde_json::from_slice(
            &fs::read(info.dataset.join(&s.manifest.scene_id).join(MANIFEST_FILE)).unwrap(),
        )
        .unwrap();
        assert!(s.manifest.labels.cuboids.len() >= original.labels.cuboids.len());
        for (a, b) in s.manifest.labels.cuboids.iter().zip(&original.labels.cuboids) {
            assert_eq!((&a.class_label, a.center, a.yaw), (&b.class_label, b.center, b.yaw));
        }
    }
    let mut again = cfg;
    again.dataset = out;
    again.output = info.root.join("out2");
    let r = run_batch(again, false).unwrap();
    assert_eq!(r.scenes_processed, 3);
}

#[test]
fn every_placed_asset_labelled_where_visible() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 4, 8);
    let mut cfg = config(&info, "out");
    cfg.validate().unwrap();
    let engine = Engine::from_config(cfg).unwrap();
    for (_, s) in load_dataset(&info.dataset, 0.6).unwrap() {
        let s = s.unwrap();
        let out = run_scene(&s, &engine, &mut scene_rng(3, &s.manifest.scene_id)).unwrap();
        let base = s.manifest.labels.cuboids.len();
        assert_eq!(out.manifest.labels.cuboids.len(), base + out.instances.len());
        for (i, inst) in out.instances.iter().enumerate() {
            for (k, v) in inst.visibility.iter().enumerate() {
                let drawn = out.layers[k].instance.contains(&(i as u32 + 1));
                let has_box = out.manifest.labels.bboxes2d.iter().any(|b| b.camera == k && b.object == base + i);
                if v.is_some() && drawn {
                    assert!(has_box, "asset {i} camera {k} drawn but unlabelled");
                }
            }
            assert!(out.manifest.labels.cuboids[base + i].visibility > 0.0);
        }
    }
}

#[test]
fn batch_is_deterministic_across_jobs_and_order() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 5, 9);
    let mut a = config(&info, "a");
    a.jobs = 1;
    let mut b = config(&info, "b");
    b.jobs = 3;
    run_batch(a, false).unwrap();
    run_batch(b, false).unwrap();
    let sa = without_timings(snapshot(&info.root.join("a")));
    let sb = without_timings(snapshot(&info.root.join("b")));
    assert_eq!(sa, sb);

    // Scenes one at a time in reverse order give the same files.
    let mut cfg = config(&info, "c");
    cfg.validate().unwrap();
    let engine = Engine::from_config(cfg).unwrap();
    let mut scenes: Vec<ValidatedScene> = load_dataset(&info.dataset, 0.6).unwrap().into_iter().filter_map(|(_, s)| s).collect();
    scenes.reverse();
    for s in &scenes {
        let out = run_scene(s, &engine, &mut scene_rng(engine.config().seed, &s.manifest.scene_id)).unwrap();
        let dir = info.root.join("c").join(&s.manifest.scene_id);
        write_scene(s, &out, &dir).unwrap();
    }
    let sc = snapshot(&info.root.join("c"));
    for (k, v) in &sc {
        assert_eq!(sa.get(k), Some(v), "{}", k.display());
    }
}

#[test]
fn seed_changes_output() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 2, 9);
    let a = config(&info, "a");
    let mut b = config(&info, "b");
    b.seed += 1;
    run_batch(a, false).unwrap();
    run_batch(b, false).unwrap();
    assert_ne!(snapshot(&info.root.join("a")), snapshot(&info.root.join("b")));
}

#[test]
fn mean_placed_matches_count_distribution() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 100, 10);
    let mut cfg = config(&info, "out");
    cfg.render.panorama_width = 64;
    let report = run_batch(cfg, false).unwrap();
    assert_eq!(report.scenes_processed, 100);
    assert!(report.is_consistent());
    let m = report.mean_placed_per_scene;
    assert!((1.9..=2.1).contains(&m), "mean placed {m}");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(info.root.join("out").join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(json["assets_placed"].as_u64(), Some(report.assets_placed));
    assert!(info.root.join("out").join(TIMINGS_FILE).is_file());
}

#[test]
fn hdr_debug_dump_is_readable() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 1, 2);
    let mut cfg = config(&info, "out");
    cfg.debug_hdr = true;
    run_batch(cfg.clone(), false).unwrap();
    let path = cfg.output.join(DEBUG_DIR).join(&info.scene_ids[0]).join("envmap.hdr");
    let img = image::open(&path).unwrap();
    assert_eq!((img.width(), img.height()), (128, 64));
    // Debug output sits outside the dataset layout.
    assert_eq!(load_dataset(&cfg.output, 0.6).unwrap().len(), 1);
}

#[test]
fn evaluate_ground_truth_against_itself() {
    let (_d, info) = fixture(FixtureKind::SurroundFisheye, 4, 3);
    let r = evaluate(&info.dataset, &info.dataset, EvalTask::Obstacle, &EvalOptions::default()).unwrap();
    match r.result {
        EvalResult::Obstacle { classes, overall } => {
            assert!(classes.iter().all(|c| c.metrics.is_none_or(|m| m.average_precision == 1.0)));
            if let Some(m) = overall {
                assert_eq!(m.average_precision, 1.0);
                assert_eq!(m.false_positives, 0);
            }
        }
        other => panic!("{other:?}"),
    }
    let wide = EvalOptions { radius_limit: 50.0, ..EvalOptions::default() };
    let r = evaluate(&info.dataset, &info.dataset, EvalTask::Freespace, &wide).unwrap();
    match r.result {
        EvalResult::Freespace { metrics, .. } => {
            assert!(metrics.bins_evaluated > 0);
            assert_eq!(metrics.success_rate, Some(1.0));
            assert_eq!(metrics.abs_gap, Some(0.0));
        }
        other => panic!("{other:?}"),
    }
    assert!(!r.table().is_empty());
}

#[test]
fn evaluate_missing_predictions_count_as_misses() {
    let (_d, gt) = fixture(FixtureKind::SurroundFisheye, 4, 3);
    let empty = TempDir::new().unwrap();
    let r = evaluate(empty.path(), &gt.dataset, EvalTask::Obstacle, &EvalOptions::default()).unwrap();
    assert_eq!(r.missing_predictions.len(), 4);
    if let EvalResult::Obstacle { overall: Some(m), .. } = r.result {
        assert_eq!(m.average_precision, 0.0);
        assert_eq!(m.true_positives, 0);
    }
}

#[test]
fn config_round_trips_through_json_and_toml() {
    let (_d, info) = fixture(FixtureKind::Parking, 1, 3);
    let cfg = RunConfig::load(&info.config).unwrap();
    let json_path = info.root.join("config.json");
    let mut raw: RunConfig = toml::from_str(&fs::read_to_string(&info.config).unwrap()).unwrap();
    raw.dataset = "dataset".into();
    fs::write(&json_path, serde_json::to_string(&raw).unwrap()).unwrap();
    assert_eq!(RunConfig::load(&json_path).unwrap(), cfg);
    assert!(matches!(
        RunConfig::load(&info.root.join("missing.toml")),
        Err(e) if e.is_io()
    ));
    fs::write(info.root.join("bad.toml"), "dataset = 3").unwrap();
    assert!(matches!(RunConfig::load(&info.root.join("bad.toml")), Err(PipelineError::Config(_))));
}
