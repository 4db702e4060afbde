use nalgebra::{Vector2, Vector3};

use crate::geometry::{box_outline_bounds, cuboid_corners, CameraModel, Cuboid3D, ImageRect, OrientedBox};

use super::PlacementError;

/// Occluded fraction at or above which a candidate counts as hidden in a camera.
pub const FULL_OCCLUSION_THRESHOLD: f64 = 0.95;

/// Silhouettes are ray cast on at most this many samples per side.
const MAX_GRID: f64 = 64.0;

/// Existing scene boxes prepared as depth proxies for a set of cameras.
#[derive(Debug, Clone)]
pub struct OcclusionScene<'a> {
    cameras: &'a [CameraModel],
    boxes: Vec<OrientedBox>,
    /// Per camera, per box: clipped image bounds.
    bounds: Vec<Vec<Option<ImageRect>>>,
}

impl<'a> OcclusionScene<'a> {
    pub fn new(cameras: &'a [CameraModel], occluders: &[Cuboid3D]) -> Self {
        let boxes = occluders.iter().map(Cuboid3D::to_oriented_box).collect();
        let bounds = cameras
            .iter()
            .map(|cam| {
                occluders
                    .iter()
                    .map(|c| clipped_bounds(c, cam))
                    .collect()
            })
            .collect();
        Self { cameras, boxes, bounds }
    }

    pub fn cameras(&self) -> &[CameraModel] {
        self.cameras
    }

    /// Add a box, e.g. an asset that was just accepted.
    pub fn push(&mut self, c: &Cuboid3D) {
        self.boxes.push(c.to_oriented_box());
        for (cam, b) in self.cameras.iter().zip(self.bounds.iter_mut()) {
            b.push(clipped_bounds(c, cam));
        }
    }

    /// Fraction of `target`'s visible silhouette in camera `cam` that lies
    /// behind an occluder.
    pub fn occlusion_fraction(&self, target: &Cuboid3D, cam: usize) -> Result<f64, PlacementError> {
        let camera = &self.cameras[cam];
        let rect = clipped_bounds(target, camera).ok_or(PlacementError::NotVisible)?;
        let relevant: Vec<&OrientedBox> = self.boxes
            .iter()
            .zip(&self.bounds[cam])
            .filter(|(_, b)| b.and_then(|b| b.intersection(&rect)).is_some())
            .map(|(o, _)| o)
            .collect();
        let stats = silhouette_samples(&target.to_oriented_box(), camera, &rect, &relevant, relevant.is_empty());
        if stats.hits == 0 {
            return Err(PlacementError::NotVisible);
        }
        Ok(stats.occluded as f64 / stats.hits as f64)
    }
}

/// Standalone form of [`OcclusionScene::occlusion_fraction`].
pub fn occlusion_fraction(candidate: &Cuboid3D, camera: &CameraModel, scene: &[Cuboid3D]) -> Result<f64, PlacementError> {
    let cams = std::slice::from_ref(camera);
    OcclusionScene::new(cams, scene).occlusion_fraction(candidate, 0)
}

pub(crate) fn clipped_bounds(c: &Cuboid3D, camera: &CameraModel) -> Option<ImageRect> {
    box_outline_bounds(&cuboid_corners(c), camera)?.intersection(&ImageRect::image(camera))
}

pub(crate) struct SilhouetteStats {
    pub hits: usize,
    pub occluded: usize,
}

/// Cast rays through a pixel-center grid covering `rect`. A sample is a hit when
/// it meets `target`, and occluded when some occluder is met first.
pub(crate) fn silhouette_samples(
    target: &OrientedBox,
    camera: &CameraModel,
    rect: &ImageRect,
    occluders: &[&OrientedBox],
    stop_at_first_hit: bool,
) -> SilhouetteStats {
    let x0 = rect.min[0].floor().max(0.0) as u32;
    let y0 = rect.min[1].floor().max(0.0) as u32;
    let x1 = (rect.max[0].ceil() as u32).min(camera.width());
    let y1 = (rect.max[1].ceil() as u32).min(camera.height());
    let span = (x1.saturating_sub(x0)).max(y1.saturating_sub(y0)) as f64;
    let step = ((span / MAX_GRID).ceil() as usize).max(1);
    let origin = camera.center();
    let mut stats = SilhouetteStats { hits: 0, occluded: 0 };
    for y in (y0..y1).step_by(step) {
        for x in (x0..x1).step_by(step) {
            let Ok(dir) = camera.unproject(&Vector2::new(x as f64 + 0.5, y as f64 + 0.5)) else {
                continue;
            };
            let ray = crate::geometry::Ray { origin, dir };
            let Some(t) = target.ray_intersect(&ray) else { continue };
            stats.hits += 1;
            if stop_at_first_hit {
                return stats;
            }
            if occluders.iter().any(|o| o.ray_intersect(&ray).is_some_and(|to| to < t)) {
                stats.occluded += 1;
            }
        }
    }
    stats
}

/// Box of the candidate as posed, used as its own depth proxy.
pub(crate) fn pose_box(center: Vector3<f64>, dims: [f64; 3], yaw: f64, label: &str) -> Cuboid3D {
    Cuboid3D {
        center: center.into(),
        dimensions: dims,
        yaw: crate::geometry::normalize_angle(yaw),
        class_label: label.to_string(),
        visibility: 1.0,
    }
}
