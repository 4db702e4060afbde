//! Ground truth for inserted assets, updates to existing labels, and metrics.

mod metrics;
mod rdm;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geometry::{box_outline_bounds, cuboid_corners, CameraModel, Cuboid3D, ImageRect, OrientedBox, Ray};
use crate::placement::{polygon_contains, silhouette_samples, AssetInstance, LockState, ParkingSpot};
use crate::render::{RenderLayers, NO_INSTANCE};

pub use metrics::{
    detection_metrics, detection_table, match_cuboids, match_error, rdm_accumulate, rdm_metrics, rdm_table, Assignment,
    DetectionAccumulator, DetectionMetrics, MatchCriteria, MetricsError, RdmAccumulator, RdmMetrics, ScoredCuboid,
    ScoredOutcome, HAZARD_LABEL, MAX_RELATIVE_RADIAL_ERROR, MAX_YAW_DIFFERENCE_DEG, RDM_SUCCESS_GAP,
};
pub use rdm::{rdm_update, RadialDistanceMap, RdmBin, NO_LABEL};

/// Default number of freespace bins (1 degree each).
pub const DEFAULT_RDM_BINS: usize = 360;

/// Axis-aligned 2D box of a cuboid in one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub camera: usize,
    /// Index into [`LabelSet::cuboids`].
    pub object: usize,
    pub class_label: String,
    pub rect: ImageRect,
    /// Fraction of the unclipped box outside the image.
    pub truncation: f64,
    /// 1 - visibility.
    pub occlusion: f64,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub cuboids: Vec<Cuboid3D>,
    #[serde(default)]
    pub bboxes2d: Vec<BBox2D>,
    pub freespace: RadialDistanceMap,
    #[serde(default)]
    pub parking: Vec<ParkingSpot>,
    /// Detection confidences, parallel to `cuboids`. Only predictions carry them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
}

impl LabelSet {
    pub fn new(bins: usize) -> Self {
        Self { cuboids: Vec::new(), bboxes2d: Vec::new(), freespace: RadialDistanceMap::unbounded(bins), parking: Vec::new(), scores: Vec::new() }
    }
}

/// Tight yaw-aligned box of the posed mesh.
pub fn synth_cuboid(instance: &AssetInstance) -> Cuboid3D {
    instance.cuboid()
}

/// Project a cuboid into a camera. `proxies` are other boxes that may hide
/// it; the cuboid itself is ignored if present. `None` when nothing of the
/// box projects into the image.
pub fn cuboid_to_bbox2d(c: &Cuboid3D, camera: &CameraModel, camera_index: usize, proxies: &[Cuboid3D]) -> Option<BBox2D> {
    let full = box_outline_bounds(&cuboid_corners(c), camera)?;
    let rect = full.intersection(&ImageRect::image(camera))?;
    let truncation = if full.area() > 0.0 { (1.0 - rect.area() / full.area()).clamp(0.0, 1.0) } else { 0.0 };
    let boxes: Vec<OrientedBox> = proxies.iter().filter(|p| *p != c).map(Cuboid3D::to_oriented_box).collect();
    let refs: Vec<&OrientedBox> = boxes.iter().collect();
    let stats = silhouette_samples(&c.to_oriented_box(), camera, &rect, &refs, false);
    let visibility = if stats.hits == 0 { 1.0 } else { 1.0 - stats.occluded as f64 / stats.hits as f64 };
    Some(BBox2D {
        camera: camera_index,
        object: 0,
        class_label: c.class_label.clone(),
        rect,
        truncation,
        occlusion: 1.0 - visibility,
        visibility,
    })
}

/// Cuboids and 2D boxes for the placed instances, numbered after the
/// `existing` labels. A box is emitted in every camera where the asset keeps
/// some visible area.
pub fn synth_labels(existing: &LabelSet, instances: &[AssetInstance], cameras: &[CameraModel]) -> (Vec<Cuboid3D>, Vec<BBox2D>) {
    let synth: Vec<Cuboid3D> = instances.iter().map(synth_cuboid).collect();
    let mut proxies = existing.cuboids.clone();
    proxies.extend(synth.iter().cloned());
    let mut boxes = Vec::new();
    let mut cuboids = Vec::with_capacity(synth.len());
    for (i, c) in synth.iter().enumerate() {
        let object = existing.cuboids.len() + i;
        let mut best: f64 = 0.0;
        for (k, cam) in cameras.iter().enumerate() {
            if let Some(mut b) = cuboid_to_bbox2d(c, cam, k, &proxies) {
                if b.visibility > 0.0 {
                    b.object = object;
                    best = best.max(b.visibility);
                    boxes.push(b);
                }
            }
        }
        cuboids.push(Cuboid3D { visibility: best, ..c.clone() });
    }
    (cuboids, boxes)
}

/// Account for the inserted assets in the pre-existing labels: 2D visibility
/// drops by the share of each real object's silhouette now covered by nearer
/// synthetic pixels, freespace bins shrink to the new obstacles, and parking
/// spots receiving a ground lock take its state.
pub fn update_existing_labels(
    labels: &LabelSet,
    instances: &[AssetInstance],
    layers: &[RenderLayers],
    cameras: &[CameraModel],
) -> LabelSet {
    let mut out = labels.clone();
    if instances.is_empty() {
        return out;
    }
    let mut touched = vec![false; out.cuboids.len()];
    for b in out.bboxes2d.iter_mut() {
        let (Some(cam), Some(layer), Some(c)) = (cameras.get(b.camera), layers.get(b.camera), labels.cuboids.get(b.object))
        else {
            continue;
        };
        let covered = covered_fraction(c, cam, layer, &b.rect);
        if covered > 0.0 {
            b.visibility = (b.visibility * (1.0 - covered)).clamp(0.0, 1.0);
            b.occlusion = 1.0 - b.visibility;
            touched[b.object] = true;
        }
    }
    for (i, c) in out.cuboids.iter_mut().enumerate() {
        if touched[i] {
            c.visibility = out.bboxes2d.iter().filter(|b| b.object == i).map(|b| b.visibility).fold(0.0, f64::max);
        }
    }
    for inst in instances {
        out.freespace = rdm_update(&out.freespace, &synth_cuboid(inst), &inst.rdm_label);
    }
    for spot in out.parking.iter_mut() {
        if spot.lock_state.is_some() {
            continue;
        }
        let lock = instances
            .iter()
            .find(|i| i.lock_state.is_some() && polygon_contains(&spot.polygon, &i.footprint.center()));
        if let Some(state) = lock.and_then(|i| i.lock_state) {
            spot.lock_state = Some(state);
            if state == LockState::Locked {
                spot.available = false;
            }
        }
    }
    out
}

/// Share of `c`'s silhouette pixels inside `rect` where a rendered asset is
/// nearer than `c`.
fn covered_fraction(c: &Cuboid3D, camera: &CameraModel, layer: &RenderLayers, rect: &ImageRect) -> f64 {
    let target = c.to_oriented_box();
    let origin = camera.center();
    let x0 = rect.min[0].floor().max(0.0) as u32;
    let y0 = rect.min[1].floor().max(0.0) as u32;
    let x1 = (rect.max[0].ceil() as u32).min(layer.width());
    let y1 = (rect.max[1].ceil() as u32).min(layer.height());
    let (mut hits, mut covered) = (0usize, 0usize);
    for y in y0..y1 {
        for x in x0..x1 {
            let Ok(dir) = camera.unproject(&Vector2::new(x as f64 + 0.5, y as f64 + 0.5)) else { continue };
            let Some(t) = target.ray_intersect(&Ray { origin, dir }) else { continue };
            hits += 1;
            let idx = layer.index(x, y);
            if layer.instance[idx] != NO_INSTANCE && layer.object[idx][3] > 0.0 && layer.depth[idx] < t {
                covered += 1;
            }
        }
    }
    if hits == 0 {
        0.0
    } else {
        covered as f64 / hits as f64
    }
}
