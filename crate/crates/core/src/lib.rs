//! Multi-camera asset insertion for driving datasets: panorama lighting
//! estimation, constrained asset placement, rendering, compositing and label
//! generation.

pub mod geometry;
pub mod imaging;
pub mod labels;
pub mod lighting;
pub mod panorama;
pub mod pipeline;
pub mod placement;
pub mod render;

pub use geometry::{CameraModel, Cuboid3D, RigidTransform};
pub use imaging::LinearImage;
pub use labels::{LabelSet, RadialDistanceMap};
pub use lighting::{EnvironmentMap, SkyFeatures};
pub use panorama::Panorama;
pub use pipeline::{PipelineError, RunConfig, RunReport, SceneManifest};
pub use placement::{AssetInstance, PlacementPolicy};
pub use render::{MeshAsset, RenderLayers};
