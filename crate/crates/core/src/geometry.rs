//! Rigid transforms, camera models and the projection math shared by every
//! other stage.
//!
//! Frame conventions:
//!
//! * ego frame: x forward, y left, z up (meters)
//! * camera frame: z forward (optical axis), x right, y down
//! * image coordinates: continuous, pixel `(i, j)` covers `[i, i+1) x [j, j+1)`
//!   so its center sits at `(i + 0.5, j + 0.5)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHONORMAL_TOL: f64 = 1e-9;
const FTHETA_NEWTON_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal with determinant +1 (deviation {0:.3e})")]
    NotARotation(f64),
    #[error("invalid camera parameters: {0}")]
    InvalidCamera(String),
    #[error("image radius {radius:.3} px is outside the invertible range [0, {max:.3}]")]
    Unprojection { radius: f64, max: f64 },
    #[error("invalid cuboid: {0}")]
    InvalidCuboid(String),
}

/// Rotation plus translation. Used as `child -> parent`, e.g. camera -> ego.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    /// Row-major 3x3.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<RawTransform> for RigidTransform {
    type Error = GeometryError;

    fn try_from(raw: RawTransform) -> Result<Self, Self::Error> {
        let r = raw.rotation;
        let m = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        RigidTransform::new(m, Vector3::from(raw.translation))
    }
}

impl From<RigidTransform> for RawTransform {
    fn from(t: RigidTransform) -> Self {
        let m = t.rotation;
        RawTransform {
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det_dev = (rotation.determinant() - 1.0).abs();
        let worst = dev.max(det_dev);
        if !worst.is_finite() || worst > ORTHONORMAL_TOL || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotARotation(worst));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation about the ego z axis followed by translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let rotation = *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix();
        Self { rotation, translation }
    }

    /// Camera -> ego extrinsics for a camera mounted at `position` whose optical
    /// axis points at azimuth `yaw` (counter-clockwise from ego x) and is tilted
    /// down by `pitch_down` radians.
    pub fn camera_mount(position: Vector3<f64>, yaw: f64, pitch_down: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch_down.sin_cos();
        let forward = Vector3::new(cy * cp, sy * cp, -sp);
        let right = Vector3::new(sy, -cy, 0.0);
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self { rotation, translation: position }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Heading of the transformed x axis in the parent xy plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

/// Lens-specific intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lens {
    Pinhole { fx: f64, fy: f64 },
    /// `r(theta) = sum_i k_i theta^i`, `k_0` must be zero. Valid up to
    /// `max_angle` (radians from the optical axis).
    Ftheta { coefficients: Vec<f64>, max_angle: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraKind {
    Pinhole,
    Ftheta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub lens: Lens,
    pub principal_point: [f64; 2],
    pub resolution: Resolution,
}

/// A calibrated camera. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraParams", into = "CameraParams")]
pub struct CameraModel {
    intrinsics: Intrinsics,
    extrinsics: RigidTransform,
    ego_to_camera: RigidTransform,
    max_radius: f64,
}

/// Serialized camera parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    #[serde(flatten)]
    pub intrinsics: Intrinsics,
    /// camera -> ego
    pub extrinsics: RigidTransform,
}

impl TryFrom<CameraParams> for CameraModel {
    type Error = GeometryError;
    fn try_from(p: CameraParams) -> Result<Self, Self::Error> {
        CameraModel::new(p.intrinsics, p.extrinsics)
    }
}

impl From<CameraModel> for CameraParams {
    fn from(c: CameraModel) -> Self {
        CameraParams { intrinsics: c.intrinsics, extrinsics: c.extrinsics }
    }
}

/// A ray in the ego frame with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

/// Result of projecting a 3D point into an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    /// z along the optical axis for pinhole cameras, Euclidean distance for f-theta.
    pub depth: f64,
}

fn poly(coefficients: &[f64], theta: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, k| acc * theta + k)
}

fn poly_derivative(coefficients: &[f64], theta: f64) -> f64 {
    coefficients
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (i, k)| acc * theta + i as f64 * k)
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, extrinsics: RigidTransform) -> Result<Self, GeometryError> {
        let Resolution { width, height } = intrinsics.resolution;
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera("resolution must be positive".into()));
        }
        if !intrinsics.principal_point.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidCamera("principal point must be finite".into()));
        }
        let max_radius = match &intrinsics.lens {
            Lens::Pinhole { fx, fy } => {
                if !(*fx > 0.0 && *fy > 0.0 && fx.is_finite() && fy.is_finite()) {
                    return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
                }
                f64::INFINITY
            }
            Lens::Ftheta { coefficients, max_angle } => {
                validate_ftheta(coefficients, *max_angle)?;
                poly(coefficients, *max_angle)
            }
        };
        Ok(Self { ego_to_camera: extrinsics.inverse(), intrinsics, extrinsics, max_radius })
    }

    pub fn pinhole(
        fx: f64,
        fy: f64,
        principal_point: [f64; 2],
        resolution: Resolution,
        extrinsics: RigidTransform,
    ) -> Result<Self, GeometryError> {
        Self::new(Intrinsics { lens: Lens::Pinhole { fx, fy }, principal_point, resolution }, extrinsics)
    }

    pub fn ftheta(
        coefficients: Vec<f64>,
        max_angle: f64,
        principal_point: [f64; 2],
        resolution: Resolution,
        extrinsics: RigidTransform,
    ) -> Result<Self, GeometryError> {
        Self::new(
            Intrinsics { lens: Lens::Ftheta { coefficients, max_angle }, principal_point, resolution },
            extrinsics,
        )
    }

    pub fn kind(&self) -> CameraKind {
        match self.intrinsics.lens {
            Lens::Pinhole { .. } => CameraKind::Pinhole,
            Lens::Ftheta { .. } => CameraKind::Ftheta,
        }
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn extrinsics(&self) -> &RigidTransform {
        &self.extrinsics
    }

    pub fn resolution(&self) -> Resolution {
        self.intrinsics.resolution
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.resolution.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.resolution.height
    }

    /// Camera center in the ego frame.
    pub fn center(&self) -> Vector3<f64> {
        *self.extrinsics.translation()
    }

    pub fn ego_to_camera(&self) -> &RigidTransform {
        &self.ego_to_camera
    }

    pub fn contains_pixel(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width() as f64
            && pixel.y < self.height() as f64
    }

    /// Project a point given in the camera frame.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Option<Projection> {
        let [cx, cy] = self.intrinsics.principal_point;
        match &self.intrinsics.lens {
            Lens::Pinhole { fx, fy } => {
                if p.z <= 0.0 {
                    return None;
                }
                Some(Projection {
                    pixel: Vector2::new(fx * p.x / p.z + cx, fy * p.y / p.z + cy),
                    depth: p.z,
                })
            }
            Lens::Ftheta { coefficients, max_angle } => {
                let rho = p.x.hypot(p.y);
                let depth = p.norm();
                if depth == 0.0 {
                    return None;
                }
                let theta = rho.atan2(p.z);
                if theta > *max_angle {
                    return None;
                }
                let r = poly(coefficients, theta);
                let pixel = if rho > 0.0 {
                    Vector2::new(cx + r * p.x / rho, cy + r * p.y / rho)
                } else {
                    Vector2::new(cx, cy)
                };
                Some(Projection { pixel, depth })
            }
        }
    }

    /// Project an ego-frame point. The pixel may fall outside the image.
    pub fn project(&self, point: &Vector3<f64>) -> Option<Projection> {
        if !point.iter().all(|v| v.is_finite()) {
            return None;
        }
        self.project_camera_point(&self.ego_to_camera.transform_point(point))
    }

    /// Project a direction at infinity (ego frame), ignoring the camera offset.
    pub fn project_direction(&self, dir: &Vector3<f64>) -> Option<Vector2<f64>> {
        self.project_camera_point(&self.ego_to_camera.transform_vector(dir)).map(|p| p.pixel)
    }

    /// Unit ray direction in the camera frame.
    pub fn unproject_camera(&self, pixel: &Vector2<f64>) -> Result<Vector3<f64>, GeometryError> {
        let [cx, cy] = self.intrinsics.principal_point;
        let dx = pixel.x - cx;
        let dy = pixel.y - cy;
        match &self.intrinsics.lens {
            Lens::Pinhole { fx, fy } => Ok(Vector3::new(dx / fx, dy / fy, 1.0).normalize()),
            Lens::Ftheta { coefficients, max_angle } => {
                let r = dx.hypot(dy);
                if r.is_nan() || r > self.max_radius {
                    return Err(GeometryError::Unprojection { radius: r, max: self.max_radius });
                }
                let theta = invert_ftheta(coefficients, *max_angle, r, self.max_radius);
                let (st, ct) = theta.sin_cos();
                if r > 0.0 {
                    Ok(Vector3::new(st * dx / r, st * dy / r, ct))
                } else {
                    Ok(Vector3::new(0.0, 0.0, 1.0))
                }
            }
        }
    }

    /// Unit ray direction in the ego frame.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Result<Vector3<f64>, GeometryError> {
        Ok(self.extrinsics.transform_vector(&self.unproject_camera(pixel)?))
    }

    pub fn ray(&self, pixel: &Vector2<f64>) -> Result<Ray, GeometryError> {
        Ok(Ray { origin: self.center(), dir: self.unproject(pixel)? })
    }

    /// Incidence angle `theta` for an image radius (f-theta only).
    pub fn ftheta_angle(&self, radius: f64) -> Option<f64> {
        match &self.intrinsics.lens {
            Lens::Ftheta { coefficients, max_angle } if radius >= 0.0 && radius <= self.max_radius => {
                Some(invert_ftheta(coefficients, *max_angle, radius, self.max_radius))
            }
            _ => None,
        }
    }
}

fn validate_ftheta(coefficients: &[f64], max_angle: f64) -> Result<(), GeometryError> {
    if coefficients.len() < 2 {
        return Err(GeometryError::InvalidCamera("f-theta needs at least k0 and k1".into()));
    }
    if coefficients.iter().any(|k| !k.is_finite()) {
        return Err(GeometryError::InvalidCamera("f-theta coefficients must be finite".into()));
    }
    if coefficients[0] != 0.0 {
        return Err(GeometryError::InvalidCamera("f-theta k0 must be zero".into()));
    }
    if !(max_angle > 0.0 && max_angle <= PI) {
        return Err(GeometryError::InvalidCamera("f-theta max angle must lie in (0, pi]".into()));
    }
    // r'(theta) > 0 on a dense grid plus strict increase between samples.
    const SAMPLES: usize = 4096;
    let mut prev = 0.0;
    for i in 0..=SAMPLES {
        let t = max_angle * i as f64 / SAMPLES as f64;
        if poly_derivative(coefficients, t) <= 0.0 {
            return Err(GeometryError::InvalidCamera(format!(
                "f-theta polynomial is not strictly increasing at theta = {t:.4}"
            )));
        }
        let r = poly(coefficients, t);
        if i > 0 && r <= prev {
            return Err(GeometryError::InvalidCamera("f-theta polynomial is not monotone".into()));
        }
        prev = r;
    }
    Ok(())
}

/// Bracketed Newton on `r(theta) = radius` over `[0, max_angle]`.
fn invert_ftheta(coefficients: &[f64], max_angle: f64, radius: f64, max_radius: f64) -> f64 {
    if radius <= 0.0 {
        return 0.0;
    }
    if radius >= max_radius {
        return max_angle;
    }
    let (mut lo, mut hi) = (0.0, max_angle);
    let k1 = coefficients[1];
    let mut theta = (radius / k1).clamp(lo, hi);
    for _ in 0..100 {
        let f = poly(coefficients, theta) - radius;
        if f > 0.0 {
            hi = theta;
        } else {
            lo = theta;
        }
        let d = poly_derivative(coefficients, theta);
        let mut next = theta - f / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - theta).abs() < FTHETA_NEWTON_TOL * 1e-3 || hi - lo < FTHETA_NEWTON_TOL * 1e-3 {
            return next;
        }
        theta = next;
    }
    theta
}

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Yaw-oriented 3D box in the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cuboid3D {
    pub center: [f64; 3],
    /// length (along heading), width, height
    pub dimensions: [f64; 3],
    pub yaw: f64,
    pub class_label: String,
    #[serde(default = "one")]
    pub visibility: f64,
}

fn one() -> f64 {
    1.0
}

impl Cuboid3D {
    pub fn new(
        center: Vector3<f64>,
        dimensions: [f64; 3],
        yaw: f64,
        class_label: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        let c = Self {
            center: center.into(),
            dimensions,
            yaw: normalize_angle(yaw),
            class_label: class_label.into(),
            visibility: 1.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.dimensions.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(GeometryError::InvalidCuboid("dimensions must be positive".into()));
        }
        if !self.center.iter().all(|v| v.is_finite()) || !self.yaw.is_finite() {
            return Err(GeometryError::InvalidCuboid("center and yaw must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(GeometryError::InvalidCuboid("visibility must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::from(self.dimensions) * 0.5
    }

    /// box -> ego
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw, self.center())
    }

    /// Ground-plane distance from the ego origin to the box center.
    pub fn radial_distance(&self) -> f64 {
        self.center[0].hypot(self.center[1])
    }

    pub fn to_oriented_box(&self) -> OrientedBox {
        OrientedBox { pose: self.pose(), half_extents: self.half_extents() }
    }
}

/// The 8 corners: bottom face first (counter-clockwise seen from above), then top.
pub fn cuboid_corners(c: &Cuboid3D) -> [Vector3<f64>; 8] {
    let h = c.half_extents();
    let pose = c.pose();
    let signs = [
        (1.0, 1.0, -1.0),
        (-1.0, 1.0, -1.0),
        (-1.0, -1.0, -1.0),
        (1.0, -1.0, -1.0),
        (1.0, 1.0, 1.0),
        (-1.0, 1.0, 1.0),
        (-1.0, -1.0, 1.0),
        (1.0, -1.0, 1.0),
    ];
    signs.map(|(sx, sy, sz)| pose.transform_point(&Vector3::new(sx * h.x, sy * h.y, sz * h.z)))
}

/// Index pairs of the 12 box edges for [`cuboid_corners`] ordering.
pub const CUBOID_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Axis-aligned rectangle in continuous image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageRect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl ImageRect {
    pub fn width(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.max[1] - self.min[1]).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &ImageRect) -> Option<ImageRect> {
        let r = ImageRect {
            min: [self.min[0].max(other.min[0]), self.min[1].max(other.min[1])],
            max: [self.max[0].min(other.max[0]), self.max[1].min(other.max[1])],
        };
        (r.max[0] > r.min[0] && r.max[1] > r.min[1]).then_some(r)
    }

    pub fn image(camera: &CameraModel) -> ImageRect {
        ImageRect { min: [0.0, 0.0], max: [camera.width() as f64, camera.height() as f64] }
    }

    fn include(&mut self, p: &Vector2<f64>) {
        self.min = [self.min[0].min(p.x), self.min[1].min(p.y)];
        self.max = [self.max[0].max(p.x), self.max[1].max(p.y)];
    }
}

/// Samples per box edge for f-theta cameras, whose straight edges project to curves.
pub const FISHEYE_EDGE_SAMPLES: usize = 32;
const PINHOLE_NEAR: f64 = 1e-3;

/// Image-space bounds of a box's projected outline, not clipped to the image.
/// Pinhole edges are clipped at the near plane; f-theta edges are sampled
/// densely and samples beyond the lens cutoff are dropped. `None` when nothing
/// projects.
pub fn box_outline_bounds(corners: &[Vector3<f64>; 8], camera: &CameraModel) -> Option<ImageRect> {
    let to_cam = camera.ego_to_camera();
    let cam: Vec<Vector3<f64>> = corners.iter().map(|c| to_cam.transform_point(c)).collect();
    let mut rect = ImageRect { min: [f64::INFINITY; 2], max: [f64::NEG_INFINITY; 2] };
    let mut any = false;
    let mut add = |p: &Vector3<f64>, rect: &mut ImageRect| {
        if let Some(pr) = camera.project_camera_point(p) {
            rect.include(&pr.pixel);
            any = true;
        }
    };
    for &(i, j) in CUBOID_EDGES.iter() {
        let (a, b) = (cam[i], cam[j]);
        match camera.kind() {
            CameraKind::Pinhole => {
                let (za, zb) = (a.z, b.z);
                if za >= PINHOLE_NEAR {
                    add(&a, &mut rect);
                }
                if zb >= PINHOLE_NEAR {
                    add(&b, &mut rect);
                }
                if (za - PINHOLE_NEAR) * (zb - PINHOLE_NEAR) < 0.0 {
                    let t = (PINHOLE_NEAR - za) / (zb - za);
                    add(&(a + (b - a) * t), &mut rect);
                }
            }
            CameraKind::Ftheta => {
                for k in 0..=FISHEYE_EDGE_SAMPLES {
                    let t = k as f64 / FISHEYE_EDGE_SAMPLES as f64;
                    add(&(a + (b - a) * t), &mut rect);
                }
            }
        }
    }
    any.then_some(rect)
}

/// Box with arbitrary rigid pose, used for ray casting depth proxies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub pose: RigidTransform,
    pub half_extents: Vector3<f64>,
}

impl OrientedBox {
    /// Entry distance along the ray, or `None` on a miss. Returns 0 when the
    /// origin is inside the box.
    pub fn ray_intersect(&self, ray: &Ray) -> Option<f64> {
        let inv = self.pose.inverse();
        let o = inv.transform_point(&ray.origin);
        let d = inv.transform_vector(&ray.dir);
        ray_aabb(&o, &d, &(-self.half_extents), &self.half_extents)
    }
}

/// Slab test. Returns the entry distance (0 if inside) for `t >= 0`.
pub fn ray_aabb(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    min: &Vector3<f64>,
    max: &Vector3<f64>,
) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if origin[a] < min[a] || origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let mut ta = (min[a] - origin[a]) * inv;
        let mut tb = (max[a] - origin[a]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

/// Moller-Trumbore. Returns the hit distance for `t > eps`.
pub fn ray_triangle(ray: &Ray, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some(t)
}

/// Per-pixel ego-frame ray directions for a camera, evaluated at pixel centers.
/// `None` where the f-theta model cannot be inverted.
#[derive(Debug, Clone)]
pub struct RayTable {
    width: u32,
    height: u32,
    dirs: Vec<Option<Vector3<f64>>>,
}

impl RayTable {
    pub fn new(camera: &CameraModel) -> Self {
        use rayon::prelude::*;
        let (w, h) = (camera.width(), camera.height());
        let dirs = (0..(w as usize * h as usize))
            .into_par_iter()
            .map(|idx| {
                let x = (idx % w as usize) as f64 + 0.5;
                let y = (idx / w as usize) as f64 + 0.5;
                camera.unproject(&Vector2::new(x, y)).ok()
            })
            .collect();
        Self { width: w, height: h, dirs }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<Vector3<f64>> {
        self.dirs[y as usize * self.width as usize + x as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn front_pinhole() -> CameraModel {
        // Identity extrinsics: camera frame coincides with the ego frame.
        CameraModel::pinhole(
            500.0,
            500.0,
            [320.0, 240.0],
            Resolution { width: 640, height: 480 },
            RigidTransform::identity(),
        )
        .unwrap()
    }

    fn fisheye() -> CameraModel {
        CameraModel::ftheta(
            vec![0.0, 300.0, -8.0, -4.0, 0.5],
            1.7,
            [640.0, 480.0],
            Resolution { width: 1280, height: 960 },
            RigidTransform::camera_mount(Vector3::new(1.0, 0.0, 1.5), 0.3, 0.1),
        )
        .unwrap()
    }

    #[test]
    fn pinhole_axis_point_hits_principal_point() {
        let cam = front_pinhole();
        let p = cam.project(&Vector3::new(0.0, 0.0, 10.0)).unwrap();
        assert_eq!(p.pixel, Vector2::new(320.0, 240.0));
        assert_eq!(p.depth, 10.0);
    }

    #[test]
    fn pinhole_hand_projection() {
        let cam = front_pinhole();
        let p = cam.project(&Vector3::new(1.0, 0.0, 10.0)).unwrap();
        assert_abs_diff_eq!(p.pixel.x, 370.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.pixel.y, 240.0, epsilon = 1e-12);
        assert_eq!(p.depth, 10.0);
        let d = cam.unproject(&Vector2::new(370.0, 240.0)).unwrap();
        let expected = Vector3::new(1.0, 0.0, 10.0).normalize();
        assert_abs_diff_eq!((d - expected).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pinhole_rejects_points_behind() {
        let cam = front_pinhole();
        assert!(cam.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(cam.project(&Vector3::new(0.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn ftheta_axis_point_hits_principal_point() {
        let cam = fisheye();
        let axis = cam.extrinsics().transform_vector(&Vector3::z());
        let p = cam.project(&(cam.center() + axis * 7.0)).unwrap();
        assert_abs_diff_eq!(p.pixel.x, 640.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.pixel.y, 480.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.depth, 7.0, epsilon = 1e-9);
        let d = cam.unproject(&Vector2::new(640.0, 480.0)).unwrap();
        assert_abs_diff_eq!((d - axis).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ftheta_beyond_max_angle_is_none() {
        let cam = fisheye();
        let back = cam.extrinsics().transform_vector(&-Vector3::z());
        assert!(cam.project(&(cam.center() + back)).is_none());
    }

    #[test]
    fn ftheta_out_of_range_radius_errors() {
        let cam = fisheye();
        let err = cam.unproject(&Vector2::new(640.0 + 5000.0, 480.0)).unwrap_err();
        assert!(matches!(err, GeometryError::Unprojection { .. }));
    }

    #[test]
    fn ftheta_validation() {
        let res = Resolution { width: 10, height: 10 };
        let id = RigidTransform::identity();
        assert!(CameraModel::ftheta(vec![1.0, 100.0], 1.0, [5.0, 5.0], res, id).is_err());
        // r' = 100 - 200 theta turns negative past 0.5.
        assert!(CameraModel::ftheta(vec![0.0, 100.0, -100.0], 1.0, [5.0, 5.0], res, id).is_err());
        assert!(CameraModel::ftheta(vec![0.0, 100.0], 3.5, [5.0, 5.0], res, id).is_err());
        assert!(CameraModel::ftheta(vec![0.0, 100.0], 3.0, [5.0, 5.0], res, id).is_ok());
    }

    #[test]
    fn ftheta_inversion_matches_forward_map() {
        let cam = fisheye();
        let Lens::Ftheta { coefficients, max_angle } = &cam.intrinsics().lens else { unreachable!() };
        for i in 0..=1000 {
            let theta = max_angle * i as f64 / 1000.0;
            let r = poly(coefficients, theta);
            let back = cam.ftheta_angle(r).unwrap();
            assert!((back - theta).abs() < 1e-6, "theta {theta} -> {back}");
        }
    }

    #[test]
    fn round_trip_grid_both_kinds() {
        for cam in [front_pinhole(), fisheye()] {
            let mut worst: f64 = 0.0;
            for i in 0..16 {
                for j in 0..16 {
                    let px = Vector2::new(
                        (i as f64 + 0.5) * cam.width() as f64 / 16.0,
                        (j as f64 + 0.5) * cam.height() as f64 / 16.0,
                    );
                    let Ok(ray) = cam.ray(&px) else { continue };
                    let p = cam.project(&ray.at(5.0)).unwrap();
                    worst = worst.max((p.pixel - px).norm());
                }
            }
            assert!(worst < 0.5, "max reprojection error {worst}");
            assert!(worst < 1e-6);
        }
    }

    #[test]
    fn transform_inverse_and_mount() {
        let t = RigidTransform::camera_mount(Vector3::new(1.0, 2.0, 3.0), 0.7, 0.2);
        let id = t.inverse().compose(&t);
        assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation().norm() < 1e-12);
        assert!(RigidTransform::new(*t.rotation(), *t.translation()).is_ok());
        assert!(RigidTransform::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
        let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(mirror, Vector3::zeros()).is_err());
    }

    #[test]
    fn front_mount_axes() {
        // A forward camera with no pitch looks along ego +x with image-right = ego -y.
        let t = RigidTransform::camera_mount(Vector3::zeros(), 0.0, 0.0);
        assert_abs_diff_eq!((t.transform_vector(&Vector3::z()) - Vector3::x()).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((t.transform_vector(&Vector3::x()) + Vector3::y()).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((t.transform_vector(&Vector3::y()) + Vector3::z()).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn transform_serde_round_trip() {
        let t = RigidTransform::camera_mount(Vector3::new(1.0, -2.0, 0.5), -2.1, 0.3);
        let s = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(t, back);
        let cam = fisheye();
        let s = serde_json::to_string(&cam).unwrap();
        let back: CameraModel = serde_json::from_str(&s).unwrap();
        assert_eq!(cam, back);
    }

    #[test]
    fn unit_cube_corners() {
        let c = Cuboid3D::new(Vector3::zeros(), [1.0, 1.0, 1.0], 0.0, "box").unwrap();
        for p in cuboid_corners(&c) {
            for v in p.iter() {
                assert_eq!(v.abs(), 0.5);
            }
        }
    }

    #[test]
    fn yaw_quarter_turn_swaps_footprint_axes() {
        let c = Cuboid3D::new(Vector3::zeros(), [4.0, 2.0, 1.0], std::f64::consts::FRAC_PI_2, "car").unwrap();
        let corners = cuboid_corners(&c);
        let max_x = corners.iter().map(|p| p.x).fold(f64::MIN, f64::max);
        let max_y = corners.iter().map(|p| p.y).fold(f64::MIN, f64::max);
        assert_abs_diff_eq!(max_x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(max_y, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_corners_match_brute_force() {
        let yaw = std::f64::consts::FRAC_PI_4;
        let c = Cuboid3D::new(Vector3::new(3.0, 4.0, 0.0), [2.0, 1.0, 1.5], yaw, "box").unwrap();
        let corners = cuboid_corners(&c);
        let (s, co) = yaw.sin_cos();
        let mut k = 0;
        for sz in [-1.0, 1.0] {
            for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                let lx = sx * 1.0;
                let ly = sy * 0.5;
                let expected = Vector3::new(3.0 + co * lx - s * ly, 4.0 + s * lx + co * ly, sz * 0.75);
                assert_abs_diff_eq!((corners[k] - expected).norm(), 0.0, epsilon = 1e-12);
                k += 1;
            }
        }
        let centroid = corners.iter().sum::<Vector3<f64>>() / 8.0;
        assert_abs_diff_eq!((centroid - c.center()).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn cuboid_rejects_bad_dims() {
        assert!(Cuboid3D::new(Vector3::zeros(), [1.0, 0.0, 1.0], 0.0, "x").is_err());
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI + 0.1), -PI + 0.1, epsilon = 1e-12);
    }

    #[test]
    fn oriented_box_ray() {
        let b = Cuboid3D::new(Vector3::new(10.0, 0.0, 0.0), [2.0, 2.0, 2.0], 0.3, "b").unwrap().to_oriented_box();
        let ray = Ray { origin: Vector3::zeros(), dir: Vector3::x() };
        let t = b.ray_intersect(&ray).unwrap();
        assert!(t > 8.8 && t < 9.0);
        let miss = Ray { origin: Vector3::zeros(), dir: Vector3::y() };
        assert!(b.ray_intersect(&miss).is_none());
    }

    proptest! {
        #[test]
        fn composition_is_associative(
            a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
            p in -1.0f64..1.0, q in -1.0f64..1.0,
            x in -5.0f64..5.0, y in -5.0f64..5.0,
        ) {
            let t1 = RigidTransform::camera_mount(Vector3::new(x, y, 1.0), a, p);
            let t2 = RigidTransform::camera_mount(Vector3::new(y, x, -1.0), b, q);
            let t3 = RigidTransform::from_yaw(c, Vector3::new(x, 0.0, y));
            let l = t1.compose(&t2).compose(&t3);
            let r = t1.compose(&t2.compose(&t3));
            prop_assert!((l.rotation() - r.rotation()).abs().max() < 1e-9);
            prop_assert!((l.translation() - r.translation()).norm() < 1e-9);
            let id = t1.inverse().compose(&t1);
            prop_assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
        }

        #[test]
        fn unproject_is_unit(u in 0.0f64..1280.0, v in 0.0f64..960.0) {
            let cam = fisheye();
            if let Ok(d) = cam.unproject(&Vector2::new(u, v)) {
                prop_assert!((d.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
