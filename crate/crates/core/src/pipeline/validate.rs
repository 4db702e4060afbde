use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::CameraModel;
use crate::panorama::{pixel_direction, pixel_solid_angle};

use super::manifest::{list_scenes, read_manifest, SceneManifest, SCHEMA_VERSION};
use super::PipelineError;

/// Default minimum share of the sphere the rig must see.
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.6;
/// Panorama grid used to measure rig coverage.
pub const COVERAGE_GRID: (u32, u32) = (256, 128);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    /// The manifest is not valid JSON for the schema.
    Manifest,
    SchemaVersion,
    NoCameras,
    DuplicateId,
    Calibration,
    ImageSize,
    Labels,
    Coverage,
}

/// Machine-readable reason a scene is not used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: RejectionReason,
    pub detail: String,
}

impl Rejection {
    pub fn new(reason: RejectionReason, detail: impl Into<String>) -> Self {
        Self { reason, detail: detail.into() }
    }
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = serde_json::to_value(self.reason).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        write!(f, "{tag}: {}", self.detail)
    }
}

#[derive(Debug)]
pub enum ValidationError {
    /// A referenced file could not be read.
    Io(PipelineError),
    Rejected(Rejection),
}

impl From<Rejection> for ValidationError {
    fn from(r: Rejection) -> Self {
        ValidationError::Rejected(r)
    }
}

/// Solid-angle share of the sphere seen by at least one camera, measured on
/// a `width x height` equirectangular grid.
pub fn rig_coverage(cameras: &[CameraModel], width: u32, height: u32) -> f64 {
    // Collected per row and summed in order so the result does not depend on the thread count.
    let rows: Vec<f64> = (0..height)
        .into_par_iter()
        .map(|v| {
            let n = (0..width)
                .filter(|&u| {
                    let d = pixel_direction(u, v, width, height);
                    cameras.iter().any(|c| c.project_direction(&d).is_some_and(|px| c.contains_pixel(&px)))
                })
                .count();
            n as f64 * pixel_solid_angle(v, width, height)
        })
        .collect();
    rows.iter().sum::<f64>() / (4.0 * PI)
}

/// Check a parsed manifest against the files in `scene_dir`. Returns the
/// calibrated cameras and the rig coverage.
pub fn validate_input(
    manifest: &SceneManifest,
    scene_dir: &Path,
    coverage_threshold: f64,
) -> Result<(Vec<CameraModel>, f64), ValidationError> {
    use RejectionReason::*;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Rejection::new(SchemaVersion, format!("expected {SCHEMA_VERSION}, got {}", manifest.schema_version)).into());
    }
    if manifest.cameras.is_empty() {
        return Err(Rejection::new(NoCameras, "scene lists no cameras").into());
    }
    let mut names = HashSet::new();
    let mut cameras = Vec::with_capacity(manifest.cameras.len());
    for entry in &manifest.cameras {
        if !names.insert(entry.name.as_str()) {
            return Err(Rejection::new(Calibration, format!("camera name {} repeated", entry.name)).into());
        }
        let (Some(i), Some(e)) = (&entry.intrinsics, &entry.extrinsics) else {
            let missing = if entry.intrinsics.is_none() { "intrinsics" } else { "extrinsics" };
            return Err(Rejection::new(Calibration, format!("camera {} has no {missing}", entry.name)).into());
        };
        let cam = CameraModel::new(i.clone(), *e)
            .map_err(|err| Rejection::new(Calibration, format!("camera {}: {err}", entry.name)))?;
        cameras.push(cam);
    }
    for file in manifest.referenced_files() {
        let path = scene_dir.join(file);
        if !path.is_file() {
            return Err(ValidationError::Io(PipelineError::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file missing"),
            )));
        }
    }
    for (entry, cam) in manifest.cameras.iter().zip(&cameras) {
        let path = scene_dir.join(&entry.image);
        let (w, h) = image::image_dimensions(&path).map_err(|e| ValidationError::Io(PipelineError::image(&path, e)))?;
        if (w, h) != (cam.width(), cam.height()) {
            return Err(Rejection::new(
                ImageSize,
                format!("{}: image is {w}x{h}, calibration {}x{}", entry.name, cam.width(), cam.height()),
            )
            .into());
        }
    }
    let labels = &manifest.labels;
    for (i, c) in labels.cuboids.iter().enumerate() {
        c.validate().map_err(|e| Rejection::new(Labels, format!("cuboid {i}: {e}")))?;
    }
    labels.freespace.validate().map_err(|e| Rejection::new(Labels, e))?;
    if labels.bboxes2d.iter().any(|b| b.camera >= cameras.len() || b.object >= labels.cuboids.len()) {
        return Err(Rejection::new(Labels, "2D box refers to a missing camera or cuboid").into());
    }
    if !labels.scores.is_empty() && labels.scores.len() != labels.cuboids.len() {
        return Err(Rejection::new(Labels, "scores must be parallel to cuboids").into());
    }
    let coverage = rig_coverage(&cameras, COVERAGE_GRID.0, COVERAGE_GRID.1);
    if coverage < coverage_threshold {
        return Err(Rejection::new(
            Coverage,
            format!("cameras cover {:.1}% of the sphere, need {:.1}%", coverage * 100.0, coverage_threshold * 100.0),
        )
        .into());
    }
    Ok((cameras, coverage))
}

/// Outcome of checking one scene directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SceneCheck {
    Accepted { coverage: f64 },
    Rejected { rejection: Rejection },
    IoError { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneValidation {
    pub scene: String,
    pub dir: PathBuf,
    pub check: SceneCheck,
}

/// A scene that passed validation, ready to run.
#[derive(Debug, Clone)]
pub struct ValidatedScene {
    pub dir: PathBuf,
    pub manifest: SceneManifest,
    /// The manifest exactly as read, reused when a scene comes out unchanged.
    pub manifest_bytes: Vec<u8>,
    pub cameras: Vec<CameraModel>,
    pub coverage: f64,
}

/// Validate every scene of a dataset. Scene ids must be unique; later
/// duplicates are rejected.
pub fn load_dataset(
    dataset: &Path,
    coverage_threshold: f64,
) -> Result<Vec<(SceneValidation, Option<ValidatedScene>)>, PipelineError> {
    let entries = list_scenes(dataset)?;
    let checked: Vec<(SceneValidation, Option<ValidatedScene>)> = entries
        .par_iter()
        .map(|entry| {
            let fail = |scene: String, check: SceneCheck| (SceneValidation { scene, dir: entry.dir.clone(), check }, None);
            let (bytes, parsed) = match read_manifest(entry) {
                Ok(r) => r,
                Err(e) => return fail(entry.name(), SceneCheck::IoError { message: e.to_string() }),
            };
            let manifest = match parsed {
                Ok(m) => m,
                Err(e) => {
                    let rejection = Rejection::new(RejectionReason::Manifest, e);
                    return fail(entry.name(), SceneCheck::Rejected { rejection });
                }
            };
            let scene = manifest.scene_id.clone();
            match validate_input(&manifest, &entry.dir, coverage_threshold) {
                Ok((cameras, coverage)) => (
                    SceneValidation { scene, dir: entry.dir.clone(), check: SceneCheck::Accepted { coverage } },
                    Some(ValidatedScene { dir: entry.dir.clone(), manifest, manifest_bytes: bytes, cameras, coverage }),
                ),
                Err(ValidationError::Io(e)) => fail(scene, SceneCheck::IoError { message: e.to_string() }),
                Err(ValidationError::Rejected(rejection)) => fail(scene, SceneCheck::Rejected { rejection }),
            }
        })
        .collect();

    let mut seen = HashSet::new();
    Ok(checked
        .into_iter()
        .map(|(mut v, s)| {
            if !seen.insert(v.scene.clone()) {
                let rejection = Rejection::new(RejectionReason::DuplicateId, format!("scene id {} already used", v.scene));
                v.check = SceneCheck::Rejected { rejection };
                return (v, None);
            }
            (v, s)
        })
        .collect())
}
