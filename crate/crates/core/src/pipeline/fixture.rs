use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, Cuboid3D, RayTable, Resolution, RigidTransform};
use crate::imaging::to_u8;
use crate::labels::{cuboid_to_bbox2d, rdm_update, LabelSet, DEFAULT_RDM_BINS};
use crate::lighting::AnalyticHdrEstimator;
use crate::placement::{
    polygon_centroid, polygon_contains, Footprint, LockState, ParkingSpot, PlacementPolicy, RegionOfInterest,
};
use crate::render::MeshAsset;

use super::config::{CatalogAsset, CatalogFile, CatalogGroup, EstimatorConfig, RenderConfig, RunConfig};
use super::manifest::{CameraEntry, SceneManifest, MANIFEST_FILE, SCHEMA_VERSION};
use super::scene::scene_rng;
use super::PipelineError;

/// Label of the real objects in fixtures.
pub const FIXTURE_VEHICLE_LABEL: &str = "vehicle";
const VEHICLE_DIMS: [f64; 3] = [4.5, 1.9, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    /// Four f-theta cameras around the car.
    SurroundFisheye,
    /// Two forward pinhole cameras and a single cube asset.
    StereoPinhole,
    /// Surround rig next to a row of parking spots; ground locks as assets.
    Parking,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 3] = [FixtureKind::SurroundFisheye, FixtureKind::StereoPinhole, FixtureKind::Parking];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::SurroundFisheye => "surround-fisheye",
            FixtureKind::StereoPinhole => "stereo-pinhole",
            FixtureKind::Parking => "parking",
        }
    }
}

impl FromStr for FixtureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown fixture kind {s}; expected surround-fisheye, stereo-pinhole or parking"))
    }
}

/// Size knobs for generated fixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    pub scenes: usize,
    pub width: u32,
    pub height: u32,
    pub panorama_width: u32,
}

impl FixtureOptions {
    pub fn for_kind(kind: FixtureKind) -> Self {
        match kind {
            FixtureKind::SurroundFisheye => Self { scenes: 10, width: 512, height: 384, panorama_width: 1024 },
            FixtureKind::StereoPinhole => Self { scenes: 4, width: 640, height: 480, panorama_width: 512 },
            FixtureKind::Parking => Self { scenes: 6, width: 512, height: 384, panorama_width: 512 },
        }
    }
}

/// Paths of a generated fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureInfo {
    pub root: PathBuf,
    pub dataset: PathBuf,
    pub catalog: PathBuf,
    pub config: PathBuf,
    pub scene_ids: Vec<String>,
}

/// Four f-theta cameras (front, left, rear, right) at `width x height`.
pub fn surround_fisheye_rig(width: u32, height: u32) -> Vec<(String, CameraModel)> {
    let k1 = width as f64 * 150.0 / 512.0;
    let coefficients = vec![0.0, k1, 0.0, -0.02 * k1, 0.0];
    let mounts = [
        ("front", Vector3::new(3.7, 0.0, 0.8), 0.0),
        ("left", Vector3::new(2.0, 1.0, 1.0), FRAC_PI_2),
        ("rear", Vector3::new(-1.0, 0.0, 0.9), PI),
        ("right", Vector3::new(2.0, -1.0, 1.0), -FRAC_PI_2),
    ];
    mounts
        .into_iter()
        .map(|(name, pos, yaw)| {
            let cam = CameraModel::ftheta(
                coefficients.clone(),
                1.75,
                [width as f64 / 2.0, height as f64 / 2.0],
                Resolution { width, height },
                RigidTransform::camera_mount(pos, yaw, 0.1),
            )
            .expect("valid fisheye");
            (name.to_string(), cam)
        })
        .collect()
}

/// Two forward pinhole cameras 0.5 m apart.
pub fn stereo_pinhole_rig(width: u32, height: u32) -> Vec<(String, CameraModel)> {
    let f = 0.6 * width as f64;
    [("stereo_left", 0.25), ("stereo_right", -0.25)]
        .into_iter()
        .map(|(name, y)| {
            let cam = CameraModel::pinhole(
                f,
                f,
                [width as f64 / 2.0, height as f64 / 2.0],
                Resolution { width, height },
                RigidTransform::camera_mount(Vector3::new(1.5, y, 1.4), 0.0, 0.05),
            )
            .expect("valid pinhole");
            (name.to_string(), cam)
        })
        .collect()
}

/// Parking spots on the left of the car, 2.5 m wide and 5 m deep.
fn parking_row() -> Vec<[f64; 2]> {
    (0..8).map(|i| [-6.0 + 2.5 * i as f64, 3.0]).collect()
}

fn spot_polygon(origin: [f64; 2]) -> Vec<[f64; 2]> {
    let [x, y] = origin;
    vec![[x, y], [x + 2.5, y], [x + 2.5, y + 5.0], [x, y + 5.0]]
}

struct World {
    cuboids: Vec<Cuboid3D>,
    colors: Vec<[f64; 3]>,
    parking: Vec<ParkingSpot>,
    sun: Vector3<f64>,
    brightness: f64,
    texture_seed: u64,
}

fn hash2(seed: u64, x: i64, y: i64) -> f64 {
    let mut h = seed ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl World {
    fn ground(&self, p: Vector3<f64>) -> [f64; 3] {
        let cell = hash2(self.texture_seed, (p.x * 2.0).floor() as i64, (p.y * 2.0).floor() as i64);
        let mut g = 0.30 + 0.08 * cell;
        // Dashed lane lines every 3.5 m.
        let lane = (p.y + 1.75).rem_euclid(3.5);
        if !(0.08..=3.42).contains(&lane) && p.x.rem_euclid(6.0) < 3.0 && p.y.abs() < 3.0 {
            g = 0.85;
        }
        let xy = Vector2::new(p.x, p.y);
        for spot in &self.parking {
            let poly = &spot.polygon;
            let inset = |d: f64| {
                let c = polygon_centroid(poly);
                poly.iter().map(|v| [c.x + (v[0] - c.x) * d, c.y + (v[1] - c.y) * d]).collect::<Vec<_>>()
            };
            if polygon_contains(poly, &xy) && !polygon_contains(&inset(0.94), &xy) {
                g = 0.8;
            }
        }
        [g * self.brightness; 3]
    }

    fn sky(&self, d: Vector3<f64>) -> [f64; 3] {
        let b = self.brightness;
        if d.dot(&self.sun) > 2f64.to_radians().cos() {
            return [1.0; 3];
        }
        let e = d.z.clamp(0.0, 1.0);
        let glow = (d.dot(&self.sun).max(0.0)).powi(32) * 0.3;
        [(0.75 - 0.35 * e) * b + glow, (0.85 - 0.25 * e) * b + glow, (0.95 - 0.05 * e) * b + glow].map(|c| c.min(1.0))
    }

    fn shade(&self, origin: Vector3<f64>, dir: Vector3<f64>) -> [f64; 3] {
        let ray = crate::geometry::Ray { origin, dir };
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in self.cuboids.iter().enumerate() {
            if let Some(t) = c.to_oriented_box().ray_intersect(&ray) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        if let Some((t, i)) = best {
            let p = ray.at(t);
            let c = &self.cuboids[i];
            let local = c.pose().inverse().transform_point(&p);
            let h = c.half_extents();
            // Lighter roof, darker sides.
            let k = if (local.z - h.z).abs() < 1e-6 { 1.0 } else { 0.7 };
            return self.colors[i].map(|v| v * k * self.brightness);
        }
        if dir.z < -1e-9 {
            let t = -origin.z / dir.z;
            return self.ground(ray.at(t));
        }
        self.sky(dir)
    }

    fn render(&self, camera: &CameraModel) -> RgbImage {
        let rays = RayTable::new(camera);
        let (w, h) = (camera.width(), camera.height());
        let origin = camera.center();
        let pixels: Vec<[u8; 3]> = (0..w as usize * h as usize)
            .into_par_iter()
            .map(|i| {
                let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
                match rays.get(x, y) {
                    Some(d) => self.shade(origin, d).map(to_u8),
                    None => [0, 0, 0],
                }
            })
            .collect();
        RgbImage::from_raw(w, h, pixels.into_iter().flatten().collect()).expect("buffer matches size")
    }
}

fn random_sun(rng: &mut impl Rng) -> Vector3<f64> {
    let az = rng.random_range(-PI..PI);
    let el = rng.random_range(30f64..60.0).to_radians();
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

fn vehicle(center: Vector2<f64>, yaw: f64) -> Cuboid3D {
    Cuboid3D::new(Vector3::new(center.x, center.y, VEHICLE_DIMS[2] / 2.0), VEHICLE_DIMS, yaw, FIXTURE_VEHICLE_LABEL)
        .expect("valid vehicle")
}

fn random_vehicles(rng: &mut impl Rng, max: usize) -> Vec<Cuboid3D> {
    let n = rng.random_range(0..=max);
    let mut out: Vec<Cuboid3D> = Vec::new();
    let ego = crate::placement::default_ego_footprint();
    let mut tries = 0;
    while out.len() < n && tries < 100 {
        tries += 1;
        let r = rng.random_range(8.0..25.0);
        let th = rng.random_range(-PI..PI);
        let c = vehicle(Vector2::new(r * f64::cos(th), r * f64::sin(th)), rng.random_range(-PI..PI));
        let fp = Footprint::from_cuboid(&c);
        if fp.intersects(&ego) || out.iter().any(|o| Footprint::from_cuboid(o).intersects(&fp)) {
            continue;
        }
        out.push(c);
    }
    out
}

fn scene_world(kind: FixtureKind, rng: &mut ChaCha8Rng, index: usize) -> World {
    let sun = random_sun(rng);
    let texture_seed = rng.random();
    // Every fifth scene is a dusk scene dark enough to need ego lights.
    let brightness = if index % 5 == 4 { 0.25 } else { 1.0 };
    let palette = [[0.6, 0.1, 0.1], [0.1, 0.2, 0.6], [0.2, 0.5, 0.2], [0.5, 0.5, 0.5]];
    let (cuboids, parking) = match kind {
        FixtureKind::SurroundFisheye => (random_vehicles(rng, 3), Vec::new()),
        FixtureKind::StereoPinhole => (random_vehicles(rng, 1), Vec::new()),
        FixtureKind::Parking => {
            let mut spots = Vec::new();
            let mut cuboids = Vec::new();
            for origin in parking_row() {
                let polygon = spot_polygon(origin);
                let available = rng.random_bool(0.6);
                let lock_state = if available && rng.random_bool(0.25) { Some(LockState::Unlocked) } else { None };
                if !available {
                    let c = polygon_centroid(&polygon);
                    cuboids.push(vehicle(c, FRAC_PI_2));
                }
                spots.push(ParkingSpot { polygon, available, lock_state });
            }
            // At least one free spot.
            if spots.iter().all(|s| !s.accepts_lock()) {
                spots[0].available = true;
                spots[0].lock_state = None;
                let c = polygon_centroid(&spots[0].polygon);
                cuboids.retain(|v| (v.center[0] - c.x).abs() > 0.1);
            }
            (cuboids, spots)
        }
    };
    let colors = (0..cuboids.len()).map(|i| palette[i % palette.len()]).collect();
    World { cuboids, colors, parking, sun, brightness, texture_seed }
}

fn scene_labels(world: &World, cameras: &[CameraModel]) -> LabelSet {
    let mut labels = LabelSet::new(DEFAULT_RDM_BINS);
    labels.parking = world.parking.clone();
    for (i, c) in world.cuboids.iter().enumerate() {
        let mut best: f64 = 0.0;
        for (k, cam) in cameras.iter().enumerate() {
            if let Some(mut b) = cuboid_to_bbox2d(c, cam, k, &world.cuboids) {
                if b.visibility > 0.0 {
                    b.object = i;
                    best = best.max(b.visibility);
                    labels.bboxes2d.push(b);
                }
            }
        }
        labels.cuboids.push(Cuboid3D { visibility: best, ..c.clone() });
        labels.freespace = rdm_update(&labels.freespace, c, FIXTURE_VEHICLE_LABEL);
    }
    labels
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| PipelineError::io(p, e))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn write_mesh(dir: &Path, name: &str, mesh: &MeshAsset) -> Result<PathBuf, PipelineError> {
    let mtl = format!("{name}.mtl");
    let (obj, mtl_text) = mesh.to_obj(&mtl);
    write(&dir.join(&mtl), mtl_text.as_bytes())?;
    let rel = PathBuf::from("meshes").join(format!("{name}.obj"));
    write(&dir.join(format!("{name}.obj")), obj.as_bytes())?;
    Ok(rel)
}

fn write_catalog(kind: FixtureKind, dir: &Path) -> Result<(CatalogFile, Vec<f64>), PipelineError> {
    let meshes = dir.join("meshes");
    let asset = |id: &str, class: &str, mesh: &MeshAsset, lock: Option<LockState>| -> Result<CatalogAsset, PipelineError> {
        Ok(CatalogAsset { id: id.into(), class_label: class.into(), mesh: write_mesh(&meshes, id, mesh)?, lock_state: lock })
    };
    let (groups, p) = match kind {
        FixtureKind::StereoPinhole => (
            vec![CatalogGroup {
                name: "hazard".into(),
                rdm_label: "hazard".into(),
                assets: vec![asset("cube", "debris", &MeshAsset::cuboid(1.0, 1.0, 1.0, [0.8, 0.5, 0.1]), None)?],
            }],
            vec![1.0],
        ),
        FixtureKind::SurroundFisheye => (
            vec![
                CatalogGroup {
                    name: "hazard".into(),
                    rdm_label: "hazard".into(),
                    assets: vec![
                        asset("cone", "traffic_cone", &MeshAsset::frustum(0.2, 0.03, 0.7, 16, [0.9, 0.35, 0.05]), None)?,
                        asset("barrel", "barrel", &MeshAsset::frustum(0.3, 0.3, 0.9, 16, [0.85, 0.4, 0.1]), None)?,
                    ],
                },
                CatalogGroup {
                    name: "vru".into(),
                    rdm_label: "vru".into(),
                    assets: vec![asset("pedestrian", "pedestrian", &MeshAsset::cuboid(0.5, 0.6, 1.75, [0.3, 0.3, 0.6]), None)?],
                },
            ],
            vec![0.6, 0.4],
        ),
        FixtureKind::Parking => (
            vec![CatalogGroup {
                name: "ground_lock".into(),
                rdm_label: "ground_lock".into(),
                assets: vec![
                    asset("lock_up", "ground_lock", &MeshAsset::cuboid(0.5, 0.6, 0.35, [0.9, 0.8, 0.1]), Some(LockState::Locked))?,
                    asset("lock_down", "ground_lock", &MeshAsset::cuboid(0.5, 0.6, 0.08, [0.9, 0.8, 0.1]), Some(LockState::Unlocked))?,
                ],
            }],
            vec![1.0],
        ),
    };
    let file = CatalogFile { groups };
    let mut json = serde_json::to_vec_pretty(&file).expect("catalog serializes");
    json.push(b'\n');
    write(&dir.join("catalog.json"), &json)?;
    Ok((file, p))
}

fn fixture_config(kind: FixtureKind, options: &FixtureOptions, seed: u64, group_p: Vec<f64>) -> RunConfig {
    let (counts, region, coverage) = match kind {
        FixtureKind::SurroundFisheye => {
            (vec![(1, 0.5), (3, 0.5)], RegionOfInterest::Annulus { r_min: 4.0, r_max: 20.0 }, 0.6)
        }
        // A forward rig sees a small part of the sphere; the threshold is lowered
        // so the scenes are used and inpainting fills the rest.
        FixtureKind::StereoPinhole => {
            (vec![(1, 1.0)], RegionOfInterest::Rectangle { longitudinal: 15.0, lateral: 4.0 }, 0.0)
        }
        FixtureKind::Parking => (vec![(1, 0.5), (2, 0.5)], RegionOfInterest::ParkingSpots { spots: Vec::new() }, 0.6),
    };
    RunConfig {
        dataset: "dataset".into(),
        output: "output".into(),
        catalog: PathBuf::from("catalog").join("catalog.json"),
        groups: None,
        placement: PlacementPolicy::new(counts, group_p, region),
        estimator: EstimatorConfig::Analytic(AnalyticHdrEstimator::default()),
        render: RenderConfig { panorama_width: options.panorama_width, ..RenderConfig::default() },
        seed,
        jobs: 1,
        coverage_threshold: coverage,
        ground_z: 0.0,
        debug_hdr: false,
    }
}

/// Write a fixture with the default size for `kind`.
pub fn gen_fixture(kind: FixtureKind, out: &Path, seed: u64) -> Result<FixtureInfo, PipelineError> {
    gen_fixture_with(kind, out, seed, &FixtureOptions::for_kind(kind))
}

/// Write a synthetic dataset under `out/dataset`, its asset catalog under
/// `out/catalog` and a run config at `out/config.toml`. Everything is a pure
/// function of `kind`, `options` and `seed`.
pub fn gen_fixture_with(kind: FixtureKind, out: &Path, seed: u64, options: &FixtureOptions) -> Result<FixtureInfo, PipelineError> {
    let rig = match kind {
        FixtureKind::StereoPinhole => stereo_pinhole_rig(options.width, options.height),
        _ => surround_fisheye_rig(options.width, options.height),
    };
    let cameras: Vec<CameraModel> = rig.iter().map(|(_, c)| c.clone()).collect();
    let dataset = out.join("dataset");
    let mut scene_ids = Vec::new();
    for i in 0..options.scenes {
        let scene_id = format!("{}-{i:04}", kind.name());
        let mut rng = scene_rng(seed, &format!("fixture/{scene_id}"));
        let world = scene_world(kind, &mut rng, i);
        let dir = dataset.join(&scene_id);
        let mut entries = Vec::new();
        for (name, cam) in &rig {
            let img = world.render(cam);
            let file = format!("{name}.png");
            let mut buf = std::io::Cursor::new(Vec::new());
            img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| PipelineError::image(&dir.join(&file), e))?;
            write(&dir.join(&file), &buf.into_inner())?;
            entries.push(CameraEntry {
                name: name.clone(),
                image: file,
                intrinsics: Some(cam.intrinsics().clone()),
                extrinsics: Some(*cam.extrinsics()),
                depth: None,
                segmentation: None,
            });
        }
        let manifest = SceneManifest {
            schema_version: SCHEMA_VERSION,
            scene_id: scene_id.clone(),
            ego_pose: RigidTransform::from_yaw(0.0, Vector3::new(100.0 * i as f64, 0.0, 0.0)),
            cameras: entries,
            labels: scene_labels(&world, &cameras),
        };
        write(&dir.join(MANIFEST_FILE), &manifest.to_json())?;
        scene_ids.push(scene_id);
    }
    let catalog_dir = out.join("catalog");
    let (_, group_p) = write_catalog(kind, &catalog_dir)?;
    let config = fixture_config(kind, options, seed, group_p);
    let text = toml::to_string(&config).map_err(|e| PipelineError::config(e.to_string()))?;
    let config_path = out.join("config.toml");
    write(&config_path, text.as_bytes())?;
    Ok(FixtureInfo {
        root: out.to_path_buf(),
        dataset,
        catalog: catalog_dir.join("catalog.json"),
        config: config_path,
        scene_ids,
    })
}
