use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{cuboid_corners, ray_triangle, CameraModel, OrientedBox, Ray, RayTable};
use crate::lighting::SkyFeatures;
use crate::placement::AssetInstance;

fn default_taps() -> u32 {
    16
}
fn default_cone() -> f64 {
    2f64.to_radians()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowParams {
    /// Light directions sampled in the cone; 1 gives a hard shadow.
    #[serde(default = "default_taps")]
    pub taps: u32,
    #[serde(default = "default_cone")]
    pub cone_half_angle: f64,
}

impl Default for ShadowParams {
    fn default() -> Self {
        Self { taps: default_taps(), cone_half_angle: default_cone() }
    }
}

/// Directions spread over a cone around `axis` on a golden-angle spiral.
pub fn shadow_taps(axis: &Vector3<f64>, taps: u32, half_angle: f64) -> Vec<Vector3<f64>> {
    let axis = axis.normalize();
    if taps <= 1 || half_angle <= 0.0 {
        return vec![axis];
    }
    let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..taps)
        .map(|k| {
            let r = half_angle * ((k as f64 + 0.5) / taps as f64).sqrt();
            let phi = k as f64 * golden;
            (axis * r.cos() + (u * phi.cos() + v * phi.sin()) * r.sin()).normalize()
        })
        .collect()
}

struct Caster {
    verts: Vec<Vector3<f64>>,
    bounds: OrientedBox,
    /// Ground-plane AABB of every point the asset can shadow.
    rect: [f64; 4],
}

/// Shadow cast by the assets onto the ground plane `z = ground_z`, as the
/// blocked fraction of the light cone around the sky's peak direction.
/// Empty when the light is at or below the horizon.
pub fn render_shadows(
    instances: &[AssetInstance],
    camera: &CameraModel,
    rays: &RayTable,
    sky: &SkyFeatures,
    ground_z: f64,
    params: &ShadowParams,
) -> Vec<f64> {
    let (w, h) = (camera.width() as usize, camera.height() as usize);
    let mut out = vec![0.0; w * h];
    let light = sky.peak_direction();
    if instances.is_empty() || light.z.is_nan() || light.z <= 0.0 {
        return out;
    }
    let taps: Vec<Vector3<f64>> = shadow_taps(&light, params.taps, params.cone_half_angle)
        .into_iter()
        .filter(|t| t.z > 1e-6)
        .collect();
    if taps.is_empty() {
        return out;
    }
    let casters: Vec<Caster> = instances
        .iter()
        .map(|inst| {
            let cuboid = inst.cuboid();
            let mut rect = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for c in cuboid_corners(&cuboid) {
                let lift = (c.z - ground_z).max(0.0);
                let mut add = |x: f64, y: f64| {
                    rect = [rect[0].min(x), rect[1].min(y), rect[2].max(x), rect[3].max(y)];
                };
                add(c.x, c.y);
                for t in &taps {
                    let s = lift / t.z;
                    add(c.x - s * t.x, c.y - s * t.y);
                }
            }
            Caster {
                verts: inst.mesh.vertices().iter().map(|v| inst.pose.transform_point(v)).collect(),
                bounds: cuboid.to_oriented_box(),
                rect,
            }
        })
        .collect();
    let origin = camera.center();

    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut active = Vec::with_capacity(casters.len());
        for (x, px) in row.iter_mut().enumerate() {
            let Some(dir) = rays.get(x as u32, y as u32) else { continue };
            if dir.z >= -1e-9 {
                continue;
            }
            let g = origin + dir * ((ground_z - origin.z) / dir.z);
            active.clear();
            active.extend(
                casters
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| g.x >= c.rect[0] && g.x <= c.rect[2] && g.y >= c.rect[1] && g.y <= c.rect[3])
                    .map(|(i, _)| i),
            );
            if active.is_empty() {
                continue;
            }
            let blocked = taps
                .iter()
                .filter(|t| {
                    let ray = Ray { origin: g + *t * 1e-6, dir: **t };
                    active.iter().any(|&i| blocks(&instances[i], &casters[i], &ray))
                })
                .count();
            *px = blocked as f64 / taps.len() as f64;
        }
    });
    out
}

fn blocks(inst: &AssetInstance, caster: &Caster, ray: &Ray) -> bool {
    if caster.bounds.ray_intersect(ray).is_none() {
        return false;
    }
    inst.mesh.triangles().iter().any(|t| {
        let [a, b, c] = t.map(|i| caster.verts[i as usize]);
        ray_triangle(ray, &a, &b, &c).is_some()
    })
}
