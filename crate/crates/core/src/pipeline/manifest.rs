use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{Intrinsics, RigidTransform};
use crate::labels::LabelSet;

use super::PipelineError;

/// Manifest schema understood by this version.
pub const SCHEMA_VERSION: u32 = 1;
/// File name of the per-scene manifest inside its directory.
pub const MANIFEST_FILE: &str = "scene.json";

/// One camera of a scene. Calibration fields are optional in the file so
/// that incomplete scenes parse and can be rejected with a reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub name: String,
    /// Image path relative to the scene directory.
    pub image: String,
    #[serde(default)]
    pub intrinsics: Option<Intrinsics>,
    /// camera -> ego
    #[serde(default)]
    pub extrinsics: Option<RigidTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<String>,
}

/// One scene: sibling image files plus labels, all in the ego frame. Angles
/// are radians and distances meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub schema_version: u32,
    pub scene_id: String,
    /// ego -> world
    pub ego_pose: RigidTransform,
    pub cameras: Vec<CameraEntry>,
    pub labels: LabelSet,
}

impl SceneManifest {
    /// Files referenced by the manifest, relative to the scene directory.
    pub fn referenced_files(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for c in &self.cameras {
            out.push(c.image.as_str());
            out.extend(c.depth.as_deref());
            out.extend(c.segmentation.as_deref());
        }
        out
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut s = serde_json::to_vec_pretty(self).expect("manifest serializes");
        s.push(b'\n');
        s
    }
}

/// A scene directory of a dataset, not yet parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneEntry {
    pub dir: PathBuf,
}

impl SceneEntry {
    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    /// Directory name, used to report scenes whose manifest cannot be read.
    pub fn name(&self) -> String {
        self.dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

/// Scene directories of a dataset: every direct subdirectory holding a
/// manifest, sorted by name.
pub fn list_scenes(dataset: &Path) -> Result<Vec<SceneEntry>, PipelineError> {
    let rd = fs::read_dir(dataset).map_err(|e| PipelineError::io(dataset, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| PipelineError::io(dataset, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(MANIFEST_FILE).exists() {
            out.push(SceneEntry { dir: path });
        }
    }
    out.sort_by(|a, b| a.dir.cmp(&b.dir));
    Ok(out)
}

/// Raw manifest bytes and their parse result. Read errors are I/O errors;
/// parse errors are returned inside so the caller can reject the scene.
pub fn read_manifest(entry: &SceneEntry) -> Result<(Vec<u8>, Result<SceneManifest, String>), PipelineError> {
    let path = entry.manifest_path();
    let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
    let parsed = serde_json::from_slice::<SceneManifest>(&bytes).map_err(|e| e.to_string());
    Ok((bytes, parsed))
}
