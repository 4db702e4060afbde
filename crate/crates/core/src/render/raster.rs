use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{CameraKind, CameraModel, Cuboid3D, Lens, OrientedBox, Ray, RayTable};
use crate::lighting::{EgoLight, EnvironmentMap, ShIrradiance};
use crate::placement::AssetInstance;

use super::{RenderLayers, NO_INSTANCE};

const NEAR: f64 = 1e-3;
/// Fisheye triangles are split until every projected edge is shorter than this.
const MAX_EDGE_PX: f64 = 2.0;
const MAX_SUBDIVISION: u32 = 10;

/// Diffuse lighting for the inserted assets.
#[derive(Debug, Clone)]
pub struct Lighting {
    pub sh: ShIrradiance,
    pub ego_lights: Vec<EgoLight>,
}

impl Lighting {
    pub fn new(env: &EnvironmentMap, ego_lights: Vec<EgoLight>) -> Self {
        Self { sh: ShIrradiance::from_panorama(&env.panorama), ego_lights }
    }

    /// Outgoing radiance of a Lambertian point.
    pub fn shade(&self, albedo: &[f64; 3], p: &Vector3<f64>, n: &Vector3<f64>) -> [f64; 3] {
        let e = self.sh.irradiance(n);
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = e[c].max(0.0) / PI;
        }
        for l in &self.ego_lights {
            let s = l.shade(p, n);
            for c in 0..3 {
                out[c] += s[c];
            }
        }
        [0, 1, 2].map(|c| albedo[c] * out[c])
    }
}

struct Posed {
    verts: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
}

/// Depth-buffered rasterization of every instance into one camera.
///
/// Coverage is decided in image space; the depth of a covered pixel is the
/// exact distance along its ray to the triangle's plane. Pixels where an
/// `occluders` box is nearer than the asset are left empty.
pub fn render_objects(
    instances: &[AssetInstance],
    camera: &CameraModel,
    rays: &RayTable,
    lighting: &Lighting,
    occluders: &[Cuboid3D],
) -> RenderLayers {
    let (w, h) = (camera.width(), camera.height());
    let mut layers = RenderLayers::empty(w, h);
    if instances.is_empty() {
        return layers;
    }
    let n = w as usize * h as usize;
    let mut tri_id = vec![0u32; n];
    let origin = camera.center();
    let to_cam = camera.ego_to_camera();
    let fov_limit = fisheye_fov_limit(camera);

    let posed: Vec<Posed> = instances
        .iter()
        .map(|inst| Posed {
            verts: inst.mesh.vertices().iter().map(|v| inst.pose.transform_point(v)).collect(),
            normals: inst.mesh.normals().iter().map(|v| inst.pose.transform_vector(v)).collect(),
        })
        .collect();

    for (ii, (inst, p)) in instances.iter().zip(&posed).enumerate() {
        let cam_pts: Vec<Vector3<f64>> = p.verts.iter().map(|v| to_cam.transform_point(v)).collect();
        for (ti, tri) in inst.mesh.triangles().iter().enumerate() {
            let [a, b, c] = tri.map(|i| p.verts[i as usize]);
            let normal = (b - a).cross(&(c - a));
            if normal.norm() < 1e-12 {
                layers.degenerate_triangles += 1;
                continue;
            }
            let normal = normal.normalize();
            let mut write = |x: u32, y: u32| {
                let Some(dir) = rays.get(x, y) else { return };
                let denom = normal.dot(&dir);
                if denom.abs() < 1e-12 {
                    return;
                }
                let t = normal.dot(&(a - origin)) / denom;
                let idx = y as usize * w as usize + x as usize;
                if t > 0.0 && t < layers.depth[idx] {
                    layers.depth[idx] = t;
                    layers.instance[idx] = ii as u32 + 1;
                    tri_id[idx] = ti as u32;
                }
            };
            let tri_cam = tri.map(|i| cam_pts[i as usize]);
            match camera.kind() {
                CameraKind::Pinhole => raster_pinhole(camera, &tri_cam, &mut write),
                CameraKind::Ftheta => raster_fisheye(camera, &tri_cam, fov_limit, 0, &mut write),
            }
        }
    }

    if !occluders.is_empty() {
        let boxes: Vec<OrientedBox> = occluders.iter().map(Cuboid3D::to_oriented_box).collect();
        for y in 0..h {
            for x in 0..w {
                let idx = layers.index(x, y);
                if layers.instance[idx] == NO_INSTANCE {
                    continue;
                }
                let Some(dir) = rays.get(x, y) else { continue };
                let ray = Ray { origin, dir };
                let t = layers.depth[idx];
                if boxes.iter().any(|b| b.ray_intersect(&ray).is_some_and(|to| to < t)) {
                    layers.depth[idx] = f64::INFINITY;
                    layers.instance[idx] = NO_INSTANCE;
                }
            }
        }
    }

    let (instance, depth) = (&layers.instance, &layers.depth);
    layers.object.par_chunks_mut(w as usize).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let idx = y * w as usize + x;
            let id = instance[idx];
            if id == NO_INSTANCE {
                continue;
            }
            let Some(dir) = rays.get(x as u32, y as u32) else { continue };
            let inst = &instances[id as usize - 1];
            let p = &posed[id as usize - 1];
            let ti = tri_id[idx] as usize;
            let tri = inst.mesh.triangles()[ti];
            let hit = origin + dir * depth[idx];
            let [a, b, c] = tri.map(|i| p.verts[i as usize]);
            let [wa, wb, wc] = barycentric(&hit, &a, &b, &c);
            let [na, nb, nc] = tri.map(|i| p.normals[i as usize]);
            let mut nrm = na * wa + nb * wb + nc * wc;
            if nrm.norm() < 1e-12 {
                nrm = (b - a).cross(&(c - a));
            }
            let nrm = nrm.normalize();
            let rgb = lighting.shade(&inst.mesh.albedo()[ti], &hit, &nrm);
            *px = [rgb[0], rgb[1], rgb[2], 1.0];
        }
    });
    layers
}

/// Barycentric weights of `p` (assumed on the plane) clamped to the triangle.
fn barycentric(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> [f64; 3] {
    let (v0, v1, v2) = (b - a, c - a, p - a);
    let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
    let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
    let den = d00 * d11 - d01 * d01;
    let v = ((d11 * d20 - d01 * d21) / den).clamp(0.0, 1.0);
    let w = ((d00 * d21 - d01 * d20) / den).clamp(0.0, 1.0);
    let u = (1.0 - v - w).max(0.0);
    let s = u + v + w;
    [u / s, v / s, w / s]
}

fn raster_pinhole(camera: &CameraModel, tri: &[Vector3<f64>; 3], write: &mut impl FnMut(u32, u32)) {
    // Clip against the near plane, then fan-triangulate.
    let mut poly: Vec<Vector3<f64>> = Vec::with_capacity(4);
    for i in 0..3 {
        let (p, q) = (tri[i], tri[(i + 1) % 3]);
        let (pin, qin) = (p.z >= NEAR, q.z >= NEAR);
        if pin {
            poly.push(p);
        }
        if pin != qin {
            let t = (NEAR - p.z) / (q.z - p.z);
            poly.push(p + (q - p) * t);
        }
    }
    if poly.len() < 3 {
        return;
    }
    let px: Option<Vec<Vector2<f64>>> = poly.iter().map(|p| camera.project_camera_point(p).map(|pr| pr.pixel)).collect();
    let Some(px) = px else { return };
    for k in 1..px.len() - 1 {
        raster_2d(camera, [px[0], px[k], px[k + 1]], write);
    }
}

/// Largest angle from the optical axis that can land in the image.
fn fisheye_fov_limit(camera: &CameraModel) -> f64 {
    let max_angle = match &camera.intrinsics().lens {
        Lens::Ftheta { max_angle, .. } => *max_angle,
        Lens::Pinhole { .. } => return PI,
    };
    let [cx, cy] = camera.intrinsics().principal_point;
    let (w, h) = (camera.width() as f64, camera.height() as f64);
    let corner = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .iter()
        .map(|(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
        .fold(0.0, f64::max);
    camera.ftheta_angle(corner).unwrap_or(max_angle).min(max_angle)
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn raster_fisheye(
    camera: &CameraModel,
    tri: &[Vector3<f64>; 3],
    fov_limit: f64,
    depth: u32,
    write: &mut impl FnMut(u32, u32),
) {
    // Every direction of the triangle lies within its longest angular edge of
    // each vertex, so it cannot reach the image if even the nearest vertex is
    // farther than that beyond the field of view.
    let axis = Vector3::z();
    let nearest = tri.iter().map(|p| angle_between(p, &axis)).fold(f64::INFINITY, f64::min);
    let spread = angle_between(&tri[0], &tri[1]).max(angle_between(&tri[1], &tri[2])).max(angle_between(&tri[2], &tri[0]));
    if nearest - spread > fov_limit {
        return;
    }
    let px: [Option<Vector2<f64>>; 3] = tri.map(|p| camera.project_camera_point(&p).map(|pr| pr.pixel));
    if let [Some(a), Some(b), Some(c)] = px {
        let longest = (a - b).norm().max((b - c).norm()).max((c - a).norm());
        // Curved edges stay within about one edge length of the chord hull.
        let lo = a.inf(&b).inf(&c).add_scalar(-longest);
        let hi = a.sup(&b).sup(&c).add_scalar(longest);
        if hi.x < 0.0 || hi.y < 0.0 || lo.x > camera.width() as f64 || lo.y > camera.height() as f64 {
            return;
        }
        if longest < MAX_EDGE_PX || depth >= MAX_SUBDIVISION {
            raster_2d(camera, [a, b, c], write);
            return;
        }
    } else if depth >= MAX_SUBDIVISION {
        return;
    }
    let [a, b, c] = *tri;
    let (ab, bc, ca) = ((a + b) * 0.5, (b + c) * 0.5, (c + a) * 0.5);
    for sub in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]] {
        raster_fisheye(camera, &sub, fov_limit, depth + 1, write);
    }
}

/// Visit pixels whose centers lie inside the triangle (edges inclusive).
fn raster_2d(camera: &CameraModel, [a, b, c]: [Vector2<f64>; 3], write: &mut impl FnMut(u32, u32)) {
    let area = edge(&a, &b, &c);
    if area.abs() < 1e-12 {
        return;
    }
    let (w, h) = (camera.width() as f64, camera.height() as f64);
    let minx = a.x.min(b.x).min(c.x);
    let maxx = a.x.max(b.x).max(c.x);
    let miny = a.y.min(b.y).min(c.y);
    let maxy = a.y.max(b.y).max(c.y);
    let x0 = (minx - 0.5).ceil().max(0.0);
    let x1 = (maxx - 0.5).floor().min(w - 1.0);
    let y0 = (miny - 0.5).ceil().max(0.0);
    let y1 = (maxy - 0.5).floor().min(h - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let s = area.signum();
    for y in y0 as u32..=y1 as u32 {
        for x in x0 as u32..=x1 as u32 {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            if s * edge(&a, &b, &p) >= 0.0 && s * edge(&b, &c, &p) >= 0.0 && s * edge(&c, &a, &p) >= 0.0 {
                write(x, y);
            }
        }
    }
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::{Resolution, RigidTransform};
    use crate::lighting::SkyFeatures;
    use crate::panorama::Panorama;
    use crate::render::{MeshAsset, PostprocessParams};
    use crate::placement::instance_footprint;
    use std::sync::Arc;

    pub(crate) fn front_camera(w: u32, h: u32) -> CameraModel {
        CameraModel::pinhole(
            w as f64 * 0.6,
            w as f64 * 0.6,
            [w as f64 / 2.0, h as f64 / 2.0],
            Resolution { width: w, height: h },
            RigidTransform::camera_mount(Vector3::new(0.0, 0.0, 1.5), 0.0, 0.0),
        )
        .unwrap()
    }

    pub(crate) fn instance(mesh: MeshAsset, pose: RigidTransform) -> AssetInstance {
        let mesh = Arc::new(mesh);
        AssetInstance {
            asset_id: "a".into(),
            group: 0,
            class_label: "hazard".into(),
            rdm_label: "hazard".into(),
            footprint: instance_footprint(&mesh, &pose),
            pose,
            mesh,
            post: PostprocessParams::default(),
            lock_state: None,
            visibility: vec![Some(1.0)],
        }
    }

    fn uniform_lighting(radiance: f64) -> Lighting {
        let pano = Panorama::from_fn(64, 32, |_, _| [radiance; 3]).unwrap();
        let env = EnvironmentMap {
            panorama: pano,
            sky: SkyFeatures { peak_direction: [0.0, 0.0, 1.0], peak_intensity: [1.0; 3], latent: vec![] },
        };
        Lighting::new(&env, vec![])
    }

    #[test]
    fn no_instances_gives_empty_layers() {
        let cam = front_camera(64, 48);
        let layers = render_objects(&[], &cam, &RayTable::new(&cam), &uniform_lighting(1.0), &[]);
        assert!(layers.is_empty());
        assert!(layers.depth.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn constant_environment_shades_to_albedo() {
        let cam = front_camera(160, 120);
        let sphere = MeshAsset::sphere(1.0, 32, 16, [1.0; 3]);
        let inst = instance(sphere, RigidTransform::from_translation(Vector3::new(6.0, 0.0, 0.5)));
        let layers = render_objects(&[inst], &cam, &RayTable::new(&cam), &uniform_lighting(1.0), &[]);
        let covered: Vec<_> = layers.object.iter().filter(|p| p[3] > 0.0).collect();
        assert!(covered.len() > 100);
        for p in covered {
            for c in 0..3 {
                assert!((p[c] - 1.0).abs() <= 0.02, "{p:?}");
            }
        }
    }

    #[test]
    fn depth_is_positive_where_covered() {
        let cam = front_camera(64, 48);
        let inst = instance(MeshAsset::cuboid(1.0, 1.0, 3.0, [0.5; 3]), RigidTransform::from_translation(Vector3::new(5.0, 0.0, 0.0)));
        let layers = render_objects(&[inst], &cam, &RayTable::new(&cam), &uniform_lighting(1.0), &[]);
        for (o, d) in layers.object.iter().zip(&layers.depth) {
            if o[3] > 0.0 {
                assert!(*d > 0.0 && d.is_finite());
            }
        }
        // The pixel just below the center sees the front face at x = 4.5.
        let c = layers.index(32, 24);
        assert!((layers.depth[c] - 4.5).abs() < 0.05, "{}", layers.depth[c]);
    }

    #[test]
    fn occluder_box_hides_asset() {
        let cam = front_camera(64, 48);
        let inst = instance(MeshAsset::cuboid(1.0, 1.0, 1.0, [0.5; 3]), RigidTransform::from_translation(Vector3::new(8.0, 0.0, 0.0)));
        let wall = Cuboid3D::new(Vector3::new(4.0, 0.0, 1.0), [0.2, 6.0, 4.0], 0.0, "wall").unwrap();
        let layers = render_objects(&[inst], &cam, &RayTable::new(&cam), &uniform_lighting(1.0), &[wall]);
        assert!(layers.object.iter().all(|p| p[3] == 0.0));
    }

    #[test]
    fn degenerate_triangles_counted() {
        let mesh = MeshAsset::new(
            vec![Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0, Vector3::y()],
            vec![Vector3::z(); 4],
            vec![[0, 1, 2], [0, 1, 3]],
            vec![[0.5; 3]; 2],
        )
        .unwrap();
        let cam = front_camera(64, 48);
        let inst = instance(mesh, RigidTransform::from_translation(Vector3::new(5.0, 0.0, 1.0)));
        let layers = render_objects(&[inst], &cam, &RayTable::new(&cam), &uniform_lighting(1.0), &[]);
        assert_eq!(layers.degenerate_triangles, 1);
    }
}
