use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{CameraModel, Cuboid3D, OrientedBox, Ray, RayTable};
use crate::imaging::{linearize, LinearImage};
use crate::labels::{synth_labels, update_existing_labels};
use crate::lighting::{ego_lights, expand_hdr, fuse_envmap, EnvironmentMap, HdrEstimator};
use crate::panorama::{direction_encoding, inpaint, DirectionEncoding, StitchMap};
use crate::placement::{default_ego_footprint, place_assets, AssetCatalog, AssetInstance, PlacementStats, SceneContext};
use crate::render::{
    composite, postprocess, render_objects, render_shadows, Lighting, PostprocessParams, RenderLayers,
};

use super::config::{load_catalog, Range, RunConfig};
use super::manifest::SceneManifest;
use super::validate::ValidatedScene;
use super::PipelineError;

/// Rigs kept in each cache before it is flushed.
const CACHE_LIMIT: usize = 16;

/// Per-scene random stream: ChaCha8 keyed by SHA-256 of the global seed
/// (little endian) followed by the scene id.
pub fn scene_rng(seed: u64, scene_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(scene_id.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Seconds spent per stage, summed over scenes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings(pub BTreeMap<String, f64>);

impl StageTimings {
    pub fn add(&mut self, stage: &str, seconds: f64) {
        *self.0.entry(stage.to_string()).or_default() += seconds;
    }

    pub fn merge(&mut self, other: &StageTimings) {
        for (k, v) in &other.0 {
            self.add(k, *v);
        }
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }
}

/// A stage failed; the scene is skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFailure {
    pub stage: String,
    pub message: String,
}

impl Display for SceneFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

fn failed<E: Display>(stage: &'static str) -> impl Fn(E) -> SceneFailure {
    move |e| SceneFailure { stage: stage.to_string(), message: e.to_string() }
}

/// Output frame of one camera.
#[derive(Debug, Clone)]
pub enum FrameData {
    /// Input file bytes, written back unchanged.
    Original(Vec<u8>),
    Rendered(RgbImage),
}

#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub manifest: SceneManifest,
    /// Set when nothing was inserted: the input manifest bytes.
    pub unchanged_manifest: Option<Vec<u8>>,
    pub frames: Vec<FrameData>,
    pub instances: Vec<AssetInstance>,
    /// Post-processed layers per camera; empty when nothing was inserted.
    pub layers: Vec<RenderLayers>,
    pub post: PostprocessParams,
    pub stats: PlacementStats,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
    pub environment: EnvironmentMap,
}

type Cache<T> = Mutex<HashMap<String, Arc<OnceLock<Arc<T>>>>>;

fn cached<T>(cache: &Cache<T>, key: String, build: impl FnOnce() -> T) -> Arc<T> {
    let cell = {
        let mut m = cache.lock().expect("cache lock");
        if m.len() >= CACHE_LIMIT && !m.contains_key(&key) {
            m.clear();
        }
        m.entry(key).or_default().clone()
    };
    cell.get_or_init(|| Arc::new(build())).clone()
}

fn camera_key(c: &CameraModel) -> String {
    serde_json::to_string(c).expect("camera serializes")
}

/// Shared, read-only state of a run: config, assets, estimator and
/// per-rig lookup tables.
pub struct Engine {
    config: RunConfig,
    catalog: AssetCatalog,
    estimator: Box<dyn HdrEstimator>,
    encoding: DirectionEncoding,
    stitch_maps: Cache<StitchMap>,
    ray_tables: Cache<RayTable>,
}

impl Engine {
    /// `config` must have been validated.
    pub fn new(config: RunConfig, catalog: AssetCatalog) -> Result<Self, PipelineError> {
        if catalog.groups.len() != config.placement.group_distribution.len() {
            return Err(PipelineError::config(format!(
                "group_distribution has {} entries, catalog selection {} groups",
                config.placement.group_distribution.len(),
                catalog.groups.len()
            )));
        }
        let (w, h) = config.render.panorama_size();
        let encoding = direction_encoding(w, h).map_err(|e| PipelineError::config(e.to_string()))?;
        Ok(Self {
            estimator: config.estimator.build(),
            config,
            catalog,
            encoding,
            stitch_maps: Mutex::default(),
            ray_tables: Mutex::default(),
        })
    }

    /// Load the catalog named by `config`.
    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        let catalog = load_catalog(&config.catalog, config.groups.as_deref())?;
        Self::new(config, catalog)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn catalog(&self) -> &AssetCatalog {
        &self.catalog
    }

    pub fn stitch_map(&self, cameras: &[CameraModel]) -> Result<Arc<StitchMap>, PipelineError> {
        let (w, h) = self.config.render.panorama_size();
        let key = cameras.iter().map(camera_key).collect::<Vec<_>>().join("|");
        let refs: Vec<&CameraModel> = cameras.iter().collect();
        if refs.is_empty() {
            return Err(PipelineError::config("scene has no cameras"));
        }
        Ok(cached(&self.stitch_maps, key, || StitchMap::new(&refs, w, h).expect("panorama size validated")))
    }

    pub fn ray_table(&self, camera: &CameraModel) -> Arc<RayTable> {
        cached(&self.ray_tables, camera_key(camera), || RayTable::new(camera))
    }
}

fn uniform(range: Range, rng: &mut impl Rng) -> f64 {
    let [lo, hi] = range;
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draw this scene's post-processing parameters from the configured ranges.
pub fn sample_postprocess(config: &RunConfig, rng: &mut impl Rng) -> PostprocessParams {
    let r = &config.render;
    PostprocessParams {
        shadow_strength: uniform(r.shadow_strength, rng),
        saturation: uniform(r.saturation, rng),
        blur_sigma: uniform(r.blur_sigma, rng),
        noise_sigma: uniform(r.noise_sigma, rng),
    }
}

/// Drop shadow where a real object stands between the camera and the ground.
fn mask_shadow(shadow: &mut [f64], camera: &CameraModel, rays: &RayTable, occluders: &[OrientedBox], ground_z: f64) {
    if occluders.is_empty() {
        return;
    }
    let w = camera.width() as usize;
    let origin = camera.center();
    shadow.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, s) in row.iter_mut().enumerate() {
            if *s == 0.0 {
                continue;
            }
            let Some(dir) = rays.get(x as u32, y as u32) else { continue };
            let t_ground = (ground_z - origin.z) / dir.z;
            let ray = Ray { origin, dir };
            if occluders.iter().any(|b| b.ray_intersect(&ray).is_some_and(|t| t < t_ground)) {
                *s = 0.0;
            }
        }
    });
}

/// Augment one validated scene. Stages run in a fixed order: stitch,
/// inpaint, HDR expansion, env-map fusion, ego lights, placement, rendering
/// of objects and shadows, post-processing, compositing, then labels.
pub fn run_scene(scene: &ValidatedScene, engine: &Engine, rng: &mut ChaCha8Rng) -> Result<SceneOutput, SceneFailure> {
    let cfg = engine.config();
    let mut timings = StageTimings::default();
    let mut clock = Instant::now();
    let mut lap = |timings: &mut StageTimings, stage: &str| {
        timings.add(stage, clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };
    let manifest = &scene.manifest;
    let cameras = &scene.cameras;

    let raw: Vec<Vec<u8>> = manifest
        .cameras
        .iter()
        .map(|c| fs::read(scene.dir.join(&c.image)))
        .collect::<Result<_, _>>()
        .map_err(failed("load"))?;
    let frames: Vec<RgbImage> = raw
        .par_iter()
        .map(|b| image::load_from_memory(b).map(|i| i.to_rgb8()))
        .collect::<Result<_, _>>()
        .map_err(failed("load"))?;
    lap(&mut timings, "load");

    let linear: Vec<LinearImage> = frames.par_iter().map(linearize).collect();
    let map = engine.stitch_map(cameras).map_err(failed("stitch"))?;
    let refs: Vec<&LinearImage> = linear.iter().collect();
    let panorama = map.stitch(&refs).map_err(failed("stitch"))?;
    lap(&mut timings, "stitch");

    let ldr = inpaint(&panorama).map_err(failed("inpaint"))?;
    lap(&mut timings, "inpaint");

    let (hdr, sky) = expand_hdr(&ldr, &engine.encoding, engine.estimator.as_ref()).map_err(failed("expand_hdr"))?;
    lap(&mut timings, "expand_hdr");

    let environment = fuse_envmap(&ldr, &hdr, sky).map_err(failed("fuse_envmap"))?;
    lap(&mut timings, "fuse_envmap");

    let lights = ego_lights(&environment, &cfg.render.ego_lights);
    lap(&mut timings, "ego_lights");

    let post = sample_postprocess(cfg, rng);
    let labels = &manifest.labels;
    let ctx = SceneContext {
        cameras,
        cuboids: &labels.cuboids,
        parking: &labels.parking,
        ego: Some(default_ego_footprint()),
        ground_z: cfg.ground_z,
        post: post.clone(),
    };
    let placement = place_assets(&cfg.placement, engine.catalog(), &ctx, rng).map_err(failed("place_assets"))?;
    lap(&mut timings, "place_assets");

    let mut warnings = Vec::new();
    if placement.stats.placed < placement.stats.requested {
        warnings.push(format!("placed {} of {} requested assets", placement.stats.placed, placement.stats.requested));
    }
    let instances = placement.instances;
    if instances.is_empty() {
        return Ok(SceneOutput {
            manifest: manifest.clone(),
            unchanged_manifest: Some(scene.manifest_bytes.clone()),
            frames: raw.into_iter().map(FrameData::Original).collect(),
            instances,
            layers: Vec::new(),
            post,
            stats: placement.stats,
            timings,
            warnings,
            environment,
        });
    }

    let lighting = Lighting::new(&environment, lights);
    let occluders: Vec<OrientedBox> = labels.cuboids.iter().map(Cuboid3D::to_oriented_box).collect();
    let rendered: Vec<RenderLayers> = cameras
        .par_iter()
        .map(|cam| {
            let rays = engine.ray_table(cam);
            let mut layers = render_objects(&instances, cam, &rays, &lighting, &labels.cuboids);
            layers.shadow = render_shadows(&instances, cam, &rays, &environment.sky, cfg.ground_z, &cfg.render.shadow);
            mask_shadow(&mut layers.shadow, cam, &rays, &occluders, cfg.ground_z);
            layers
        })
        .collect();
    lap(&mut timings, "render");

    let seeds: Vec<u64> = cameras.iter().map(|_| rng.random()).collect();
    let layers: Vec<RenderLayers> = rendered
        .par_iter()
        .zip(&seeds)
        .map(|(l, s)| postprocess(l, &post, &mut ChaCha8Rng::seed_from_u64(*s)))
        .collect::<Result<_, _>>()
        .map_err(failed("postprocess"))?;
    lap(&mut timings, "postprocess");

    let composited: Vec<RgbImage> = frames
        .par_iter()
        .zip(&layers)
        .map(|(f, l)| composite(f, l))
        .collect::<Result<_, _>>()
        .map_err(failed("composite"))?;
    let frames: Vec<FrameData> = composited
        .into_iter()
        .zip(raw)
        .zip(&layers)
        .map(|((img, bytes), l)| if l.is_empty() { FrameData::Original(bytes) } else { FrameData::Rendered(img) })
        .collect();
    lap(&mut timings, "composite");

    let (cuboids, boxes) = synth_labels(labels, &instances, cameras);
    lap(&mut timings, "synth_labels");

    let mut out_labels = update_existing_labels(labels, &instances, &layers, cameras);
    if !out_labels.scores.is_empty() {
        out_labels.scores.extend(std::iter::repeat_n(1.0, cuboids.len()));
    }
    out_labels.cuboids.extend(cuboids);
    out_labels.bboxes2d.extend(boxes);
    lap(&mut timings, "update_labels");

    for (k, l) in layers.iter().enumerate() {
        for (i, inst) in instances.iter().enumerate() {
            let drawn = l.instance.contains(&(i as u32 + 1));
            if inst.visibility.get(k).is_some_and(|v| v.is_some()) && !drawn {
                warnings.push(format!("{} expected in camera {k} but not drawn", inst.asset_id));
            }
        }
        if l.degenerate_triangles > 0 {
            warnings.push(format!("camera {k}: skipped {} degenerate triangles", l.degenerate_triangles));
        }
    }
    Ok(SceneOutput {
        manifest: SceneManifest { labels: out_labels, ..manifest.clone() },
        unchanged_manifest: None,
        frames,
        instances,
        layers,
        post,
        stats: placement.stats,
        timings,
        warnings,
        environment,
    })
}
