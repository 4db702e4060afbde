//! Dataset I/O, run configuration, per-scene orchestration, batch execution,
//! fixtures and evaluation.

mod batch;
mod config;
mod evaluate;
mod fixture;
mod manifest;
mod scene;
mod validate;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use batch::{
    run_batch, write_hdr, write_scene, AttemptTotals, GroupCount, RunReport, SceneSummary, SkippedScene, DEBUG_DIR,
    REPORT_FILE, REPORT_TABLE_FILE, TIMINGS_FILE,
};
pub use config::{
    load_catalog, CatalogAsset, CatalogFile, CatalogGroup, EstimatorConfig, Range, RenderConfig, RunConfig,
};
pub use evaluate::{evaluate, ClassResult, DEFAULT_FREESPACE_RADIUS, EvalOptions, EvalResult, EvalTask, EvaluationReport};
pub use fixture::{
    gen_fixture, gen_fixture_with, stereo_pinhole_rig, surround_fisheye_rig, FixtureInfo, FixtureKind, FixtureOptions,
    FIXTURE_VEHICLE_LABEL,
};
pub use manifest::{list_scenes, read_manifest, CameraEntry, SceneEntry, SceneManifest, MANIFEST_FILE, SCHEMA_VERSION};
pub use scene::{
    run_scene, sample_postprocess, scene_rng, Engine, FrameData, SceneFailure, SceneOutput, StageTimings,
};
pub use validate::{
    load_dataset, rig_coverage, validate_input, Rejection, RejectionReason, SceneCheck, SceneValidation,
    ValidatedScene, ValidationError, COVERAGE_GRID, DEFAULT_COVERAGE_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("output {0} exists and is not empty; pass the overwrite flag to replace it")]
    OutputExists(PathBuf),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }

    pub fn image(path: &Path, e: image::ImageError) -> Self {
        PipelineError::Image { path: path.to_path_buf(), message: e.to_string() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        PipelineError::Config(msg.into())
    }

    /// Whether the failure comes from reading or writing files rather than
    /// from invalid input.
    pub fn is_io(&self) -> bool {
        matches!(self, PipelineError::Io { .. } | PipelineError::Image { .. })
    }
}
