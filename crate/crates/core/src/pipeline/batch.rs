use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{DynamicImage, ImageFormat, Rgb32FImage};
use serde::{Deserialize, Serialize};

use crate::lighting::EnvironmentMap;
use crate::placement::PlacementStats;

use super::config::RunConfig;
use super::manifest::MANIFEST_FILE;
use super::scene::{run_scene, scene_rng, Engine, FrameData, SceneOutput, StageTimings};
use super::validate::{load_dataset, SceneCheck, ValidatedScene};
use super::PipelineError;

pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const TIMINGS_FILE: &str = "timings.json";
pub const DEBUG_DIR: &str = "_debug";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedScene {
    pub scene: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCount {
    pub group: String,
    pub placed: u64,
}

/// Placement attempt counters summed over scenes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptTotals {
    pub requested: u64,
    pub attempts: u64,
    pub skipped_instances: u64,
    pub rejected_collision: u64,
    pub rejected_visibility: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene: String,
    pub requested: u32,
    pub placed: u32,
    pub warnings: Vec<String>,
}

/// Deterministic summary of a batch. Wall-clock timings are kept apart in
/// `timings` and written to their own file so the report reproduces
/// byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub scenes_total: usize,
    pub scenes_processed: usize,
    pub scenes_skipped: usize,
    pub assets_placed: u64,
    pub mean_placed_per_scene: f64,
    pub placed_per_group: Vec<GroupCount>,
    pub attempts: AttemptTotals,
    pub skipped: Vec<SkippedScene>,
    pub scenes: Vec<SceneSummary>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl RunReport {
    fn new(seed: u64, groups: &[String]) -> Self {
        Self {
            seed,
            scenes_total: 0,
            scenes_processed: 0,
            scenes_skipped: 0,
            assets_placed: 0,
            mean_placed_per_scene: 0.0,
            placed_per_group: groups.iter().map(|g| GroupCount { group: g.clone(), placed: 0 }).collect(),
            attempts: AttemptTotals::default(),
            skipped: Vec::new(),
            scenes: Vec::new(),
            warnings: Vec::new(),
            timings: StageTimings::default(),
        }
    }

    /// Per-group counts add up to the total and processed + skipped to all scenes.
    pub fn is_consistent(&self) -> bool {
        self.placed_per_group.iter().map(|g| g.placed).sum::<u64>() == self.assets_placed
            && self.scenes_processed + self.scenes_skipped == self.scenes_total
            && self.skipped.len() == self.scenes_skipped
            && self.scenes.len() == self.scenes_processed
            && self.scenes.iter().map(|s| s.placed as u64).sum::<u64>() == self.assets_placed
    }

    fn skip(&mut self, scene: String, reason: String) {
        log::warn!("skipping scene {scene}: {reason}");
        self.scenes_total += 1;
        self.scenes_skipped += 1;
        self.skipped.push(SkippedScene { scene, reason });
    }

    fn record(&mut self, scene: &str, out: &SceneResult) {
        let s = &out.stats;
        self.scenes_total += 1;
        self.scenes_processed += 1;
        self.assets_placed += s.placed as u64;
        for (g, n) in self.placed_per_group.iter_mut().zip(&s.placed_per_group) {
            g.placed += *n as u64;
        }
        self.attempts.requested += s.requested as u64;
        self.attempts.attempts += s.attempts as u64;
        self.attempts.skipped_instances += s.skipped as u64;
        self.attempts.rejected_collision += s.rejected_collision as u64;
        self.attempts.rejected_visibility += s.rejected_visibility as u64;
        self.timings.merge(&out.timings);
        self.scenes.push(SceneSummary {
            scene: scene.to_string(),
            requested: s.requested,
            placed: s.placed,
            warnings: out.warnings.clone(),
        });
    }

    fn finish(&mut self) {
        self.mean_placed_per_scene =
            if self.scenes_processed > 0 { self.assets_placed as f64 / self.scenes_processed as f64 } else { 0.0 };
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenes    total {:>6}  processed {:>6}  skipped {:>6}", self.scenes_total, self.scenes_processed, self.scenes_skipped);
        let _ = writeln!(s, "assets    placed {:>6}  mean/scene {:>8.3}", self.assets_placed, self.mean_placed_per_scene);
        let a = &self.attempts;
        let _ = writeln!(
            s,
            "attempts  requested {} | tries {} | given up {} | collision {} | not visible {}",
            a.requested, a.attempts, a.skipped_instances, a.rejected_collision, a.rejected_visibility
        );
        let _ = writeln!(s, "{:<24}{:>10}", "group", "placed");
        for g in &self.placed_per_group {
            let _ = writeln!(s, "{:<24}{:>10}", g.group, g.placed);
        }
        for k in &self.skipped {
            let _ = writeln!(s, "skipped {}: {}", k.scene, k.reason);
        }
        s
    }
}

/// What the report keeps of a processed scene.
struct SceneResult {
    stats: PlacementStats,
    warnings: Vec<String>,
    timings: StageTimings,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn encode_png(img: &image::RgbImage, path: &Path) -> Result<Vec<u8>, PipelineError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| PipelineError::image(path, e))?;
    Ok(buf.into_inner())
}

/// Write one scene into `dir` (created fresh) in the input layout.
pub fn write_scene(scene: &ValidatedScene, out: &SceneOutput, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    for (entry, frame) in scene.manifest.cameras.iter().zip(&out.frames) {
        let path = dir.join(&entry.image);
        match frame {
            FrameData::Original(bytes) => write_file(&path, bytes)?,
            FrameData::Rendered(img) => write_file(&path, &encode_png(img, &path)?)?,
        }
        for extra in entry.depth.iter().chain(&entry.segmentation) {
            let src = scene.dir.join(extra);
            let bytes = fs::read(&src).map_err(|e| PipelineError::io(&src, e))?;
            write_file(&dir.join(extra), &bytes)?;
        }
    }
    let manifest = match &out.unchanged_manifest {
        Some(bytes) => bytes.clone(),
        None => out.manifest.to_json(),
    };
    write_file(&dir.join(MANIFEST_FILE), &manifest)
}

/// Save an environment map as Radiance HDR.
pub fn write_hdr(env: &EnvironmentMap, path: &Path) -> Result<(), PipelineError> {
    let p = &env.panorama.pixels;
    let data: Vec<f32> = p.pixels().iter().flat_map(|c| c.map(|v| v as f32)).collect();
    let img = Rgb32FImage::from_raw(p.width(), p.height(), data).expect("buffer matches size");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    DynamicImage::ImageRgb32F(img).save_with_format(path, ImageFormat::Hdr).map_err(|e| PipelineError::image(path, e))
}

/// Write to a sibling temporary directory, then rename into place, so a
/// failed scene never leaves partial files behind.
fn commit_scene(scene: &ValidatedScene, out: &SceneOutput, output: &Path, debug_hdr: bool) -> Result<(), PipelineError> {
    let name = scene.dir.file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(&scene.manifest.scene_id));
    let tmp = output.join(format!(".tmp-{}", name.display()));
    let target = output.join(&name);
    let result = write_scene(scene, out, &tmp).and_then(|_| fs::rename(&tmp, &target).map_err(|e| PipelineError::io(&target, e)));
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
        return result;
    }
    if debug_hdr {
        write_hdr(&out.environment, &output.join(DEBUG_DIR).join(&name).join("envmap.hdr"))?;
    }
    Ok(())
}

fn prepare_output(config: &RunConfig, overwrite: bool) -> Result<(), PipelineError> {
    let out = &config.output;
    if out.exists() {
        let data = fs::canonicalize(&config.dataset).map_err(|e| PipelineError::io(&config.dataset, e))?;
        let o = fs::canonicalize(out).map_err(|e| PipelineError::io(out, e))?;
        if data.starts_with(&o) || o.starts_with(&data) {
            return Err(PipelineError::config("output directory overlaps the input dataset"));
        }
        let empty = fs::read_dir(out).map_err(|e| PipelineError::io(out, e))?.next().is_none();
        if !empty {
            if !overwrite {
                return Err(PipelineError::OutputExists(out.clone()));
            }
            fs::remove_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
        }
    }
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))
}

/// Validate and augment every scene of the configured dataset, write the
/// augmented dataset and the report. Scenes that fail are skipped with a
/// reason; only problems with the run as a whole return an error.
pub fn run_batch(mut config: RunConfig, overwrite: bool) -> Result<RunReport, PipelineError> {
    let warnings = config.validate()?;
    if !config.dataset.is_dir() {
        return Err(PipelineError::io(
            &config.dataset,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory missing"),
        ));
    }
    prepare_output(&config, overwrite)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| PipelineError::config(e.to_string()))?;
    let engine = Engine::from_config(config.clone())?;
    let groups: Vec<String> = engine.catalog().groups.iter().map(|g| g.name.clone()).collect();
    let mut report = RunReport::new(config.seed, &groups);
    report.warnings = warnings;

    let start = Instant::now();
    let checked = pool.install(|| load_dataset(&config.dataset, config.coverage_threshold))?;
    report.timings.add("validate", start.elapsed().as_secs_f64());

    let results: Vec<(String, Result<SceneResult, String>)> = pool.install(|| {
        use rayon::prelude::*;
        checked
            .par_iter()
            .map(|(v, scene)| {
                let Some(scene) = scene else {
                    let reason = match &v.check {
                        SceneCheck::Rejected { rejection } => format!("rejected ({rejection})"),
                        SceneCheck::IoError { message } => format!("unreadable ({message})"),
                        SceneCheck::Accepted { .. } => "not loaded".to_string(),
                    };
                    return (v.scene.clone(), Err(reason));
                };
                let mut rng = scene_rng(config.seed, &scene.manifest.scene_id);
                let result = run_scene(scene, &engine, &mut rng).map_err(|f| f.to_string()).and_then(|out| {
                    let t = Instant::now();
                    commit_scene(scene, &out, &config.output, config.debug_hdr).map_err(|e| format!("write failed: {e}"))?;
                    let mut timings = out.timings;
                    timings.add("write", t.elapsed().as_secs_f64());
                    Ok(SceneResult { stats: out.stats, warnings: out.warnings, timings })
                });
                (v.scene.clone(), result)
            })
            .collect()
    });

    for (scene, result) in results {
        match result {
            Ok(out) => report.record(&scene, &out),
            Err(reason) => report.skip(scene, reason),
        }
    }
    report.finish();
    debug_assert!(report.is_consistent());

    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_file(&config.output.join(REPORT_FILE), &json)?;
    write_file(&config.output.join(REPORT_TABLE_FILE), report.table().as_bytes())?;
    let timings = serde_json::to_vec_pretty(&report.timings).expect("timings serialize");
    write_file(&config.output.join(TIMINGS_FILE), &timings)?;
    Ok(report)
}
