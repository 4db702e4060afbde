use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lighting::{AnalyticHdrEstimator, EgoLightConfig, HdrEstimator};
use crate::placement::{AssetCatalog, AssetGroup, AssetSpec, LockState, PlacementPolicy};
use crate::render::{
    check_range, MeshAsset, ShadowParams, BLUR_SIGMA_RANGE, NOISE_SIGMA_RANGE, SATURATION_RANGE, SHADOW_STRENGTH_RANGE,
};

use super::validate::DEFAULT_COVERAGE_THRESHOLD;
use super::PipelineError;

/// Which LDR -> HDR estimator to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorConfig {
    Analytic(AnalyticHdrEstimator),
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Analytic(AnalyticHdrEstimator::default())
    }
}

impl EstimatorConfig {
    pub fn build(&self) -> Box<dyn HdrEstimator> {
        match self {
            EstimatorConfig::Analytic(e) => Box::new(*e),
        }
    }
}

/// Closed interval a per-scene parameter is drawn from uniformly.
pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Panorama width; the height is half of it.
    pub panorama_width: u32,
    pub shadow_strength: Range,
    pub saturation: Range,
    pub blur_sigma: Range,
    pub noise_sigma: Range,
    pub shadow: ShadowParams,
    pub ego_lights: EgoLightConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            panorama_width: 1024,
            shadow_strength: [0.6, 0.9],
            saturation: [0.7, 1.3],
            blur_sigma: [0.0, 0.5],
            noise_sigma: [0.0, 0.01],
            shadow: ShadowParams::default(),
            ego_lights: EgoLightConfig::default(),
        }
    }
}

impl RenderConfig {
    pub fn panorama_size(&self) -> (u32, u32) {
        (self.panorama_width, self.panorama_width / 2)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.panorama_width < 8 || !self.panorama_width.is_multiple_of(2) {
            return Err("panorama_width must be even and at least 8".into());
        }
        let ranges = [
            ("shadow_strength", self.shadow_strength, SHADOW_STRENGTH_RANGE),
            ("saturation", self.saturation, SATURATION_RANGE),
            ("blur_sigma", self.blur_sigma, BLUR_SIGMA_RANGE),
            ("noise_sigma", self.noise_sigma, NOISE_SIGMA_RANGE),
        ];
        for (name, [lo, hi], bounds) in ranges {
            check_range(name, lo, bounds).map_err(|e| e.to_string())?;
            check_range(name, hi, bounds).map_err(|e| e.to_string())?;
            if lo > hi {
                return Err(format!("{name}: lower bound {lo} exceeds upper bound {hi}"));
            }
        }
        if self.shadow.taps == 0 || !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.shadow.cone_half_angle) {
            return Err("shadow needs at least one tap and a cone below 90 degrees".into());
        }
        Ok(())
    }
}

fn default_jobs() -> usize {
    1
}
fn default_coverage() -> f64 {
    DEFAULT_COVERAGE_THRESHOLD
}

/// Everything a batch run needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Asset catalog JSON file.
    pub catalog: PathBuf,
    /// Catalog groups to use, in the order of `placement.group_distribution`.
    /// All catalog groups in file order when absent.
    #[serde(default)]
    pub groups: Option<Vec<String>>,
    pub placement: PlacementPolicy,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Minimum rig coverage of the sphere for a scene to be used.
    #[serde(default = "default_coverage")]
    pub coverage_threshold: f64,
    /// Height of the ground plane in the ego frame.
    #[serde(default)]
    pub ground_z: f64,
    /// Write each scene's environment map as Radiance HDR under `<output>/_debug`.
    #[serde(default)]
    pub debug_hdr: bool,
}

impl RunConfig {
    /// Parse TOML or JSON, chosen by extension (`.json` is JSON, anything
    /// else TOML).
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.output, &mut cfg.catalog] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Check ranges and normalize the placement policy. Returns warnings.
    pub fn validate(&mut self) -> Result<Vec<String>, PipelineError> {
        self.render.validate().map_err(PipelineError::config)?;
        if self.jobs == 0 {
            return Err(PipelineError::config("jobs must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return Err(PipelineError::config("coverage_threshold must lie in [0, 1]"));
        }
        if !self.ground_z.is_finite() {
            return Err(PipelineError::config("ground_z must be finite"));
        }
        self.placement.validate().map_err(|e| PipelineError::config(e.to_string()))
    }
}

/// One asset in the catalog file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogAsset {
    pub id: String,
    pub class_label: String,
    /// OBJ path relative to the catalog file.
    pub mesh: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lock_state: Option<LockState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogGroup {
    pub name: String,
    pub rdm_label: String,
    pub assets: Vec<CatalogAsset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogFile {
    pub groups: Vec<CatalogGroup>,
}

/// Read the catalog and its meshes. `groups` selects and orders groups by name.
pub fn load_catalog(path: &Path, groups: Option<&[String]>) -> Result<AssetCatalog, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let file: CatalogFile =
        serde_json::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let selected: Vec<&CatalogGroup> = match groups {
        None => file.groups.iter().collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                file.groups
                    .iter()
                    .find(|g| &g.name == n)
                    .ok_or_else(|| PipelineError::config(format!("catalog has no group {n}")))
            })
            .collect::<Result<_, _>>()?,
    };
    let mut out = AssetCatalog::default();
    for g in selected {
        let mut assets = Vec::with_capacity(g.assets.len());
        for a in &g.assets {
            let mesh_path = base.join(&a.mesh);
            if !mesh_path.is_file() {
                return Err(PipelineError::io(
                    &mesh_path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "mesh file missing"),
                ));
            }
            let mesh = MeshAsset::from_obj(&mesh_path).map_err(|e| PipelineError::config(e.to_string()))?;
            assets.push(AssetSpec {
                id: a.id.clone(),
                class_label: a.class_label.clone(),
                mesh: Arc::new(mesh),
                lock_state: a.lock_state,
            });
        }
        out.groups.push(AssetGroup { name: g.name.clone(), rdm_label: g.rdm_label.clone(), assets });
    }
    Ok(out)
}
