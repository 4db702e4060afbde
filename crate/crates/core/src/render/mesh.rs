use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::imaging::Rgb;

use super::RenderError;

const DEFAULT_ALBEDO: Rgb = [0.7, 0.7, 0.7];

/// Triangle mesh in its local frame with per-vertex normals and per-triangle albedo.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshAsset {
    vertices: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    albedo: Vec<Rgb>,
    bbox_min: Vector3<f64>,
    bbox_max: Vector3<f64>,
}

impl MeshAsset {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        triangles: Vec<[u32; 3]>,
        albedo: Vec<Rgb>,
    ) -> Result<Self, RenderError> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(RenderError::InvalidMesh("mesh has no geometry".into()));
        }
        if normals.len() != vertices.len() {
            return Err(RenderError::InvalidMesh("one normal per vertex required".into()));
        }
        if albedo.len() != triangles.len() {
            return Err(RenderError::InvalidMesh("one albedo per triangle required".into()));
        }
        if normals.iter().any(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(RenderError::InvalidMesh("normals must be unit length".into()));
        }
        if triangles.iter().flatten().any(|&i| i as usize >= vertices.len()) {
            return Err(RenderError::InvalidMesh("triangle index out of range".into()));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(RenderError::InvalidMesh("non-finite vertex".into()));
        }
        let mut bbox_min = Vector3::repeat(f64::INFINITY);
        let mut bbox_max = Vector3::repeat(f64::NEG_INFINITY);
        for v in &vertices {
            bbox_min = bbox_min.inf(v);
            bbox_max = bbox_max.sup(v);
        }
        Ok(Self { vertices, normals, triangles, albedo, bbox_min, bbox_max })
    }

    /// Mesh with smooth normals computed from area-weighted face normals.
    pub fn with_computed_normals(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[u32; 3]>,
        albedo: Vec<Rgb>,
    ) -> Result<Self, RenderError> {
        let mut acc = vec![Vector3::zeros(); vertices.len()];
        for t in &triangles {
            if t.iter().any(|&i| i as usize >= vertices.len()) {
                return Err(RenderError::InvalidMesh("triangle index out of range".into()));
            }
            let [a, b, c] = t.map(|i| vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            for &i in t {
                acc[i as usize] += n;
            }
        }
        let normals = acc
            .into_iter()
            .map(|n| if n.norm() > 0.0 { n.normalize() } else { Vector3::z() })
            .collect();
        Self::new(vertices, normals, triangles, albedo)
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn albedo(&self) -> &[Rgb] {
        &self.albedo
    }

    pub fn bbox_min(&self) -> Vector3<f64> {
        self.bbox_min
    }

    pub fn bbox_max(&self) -> Vector3<f64> {
        self.bbox_max
    }

    /// Axis-aligned box with its base centered on the local origin, flat shaded.
    pub fn cuboid(length: f64, width: f64, height: f64, color: Rgb) -> Self {
        let (hx, hy) = (length / 2.0, width / 2.0);
        let faces: [(Vector3<f64>, [Vector3<f64>; 4]); 6] = [
            (Vector3::x(), [[hx, -hy, 0.0], [hx, hy, 0.0], [hx, hy, height], [hx, -hy, height]].map(Vector3::from)),
            (-Vector3::x(), [[-hx, hy, 0.0], [-hx, -hy, 0.0], [-hx, -hy, height], [-hx, hy, height]].map(Vector3::from)),
            (Vector3::y(), [[hx, hy, 0.0], [-hx, hy, 0.0], [-hx, hy, height], [hx, hy, height]].map(Vector3::from)),
            (-Vector3::y(), [[-hx, -hy, 0.0], [hx, -hy, 0.0], [hx, -hy, height], [-hx, -hy, height]].map(Vector3::from)),
            (Vector3::z(), [[-hx, -hy, height], [hx, -hy, height], [hx, hy, height], [-hx, hy, height]].map(Vector3::from)),
            (-Vector3::z(), [[-hx, hy, 0.0], [hx, hy, 0.0], [hx, -hy, 0.0], [-hx, -hy, 0.0]].map(Vector3::from)),
        ];
        let mut vertices = Vec::new();
        let mut normals = Vec::new();
        let mut triangles = Vec::new();
        for (n, quad) in faces {
            let base = vertices.len() as u32;
            vertices.extend(quad);
            normals.extend([n; 4]);
            triangles.push([base, base + 1, base + 2]);
            triangles.push([base, base + 2, base + 3]);
        }
        let albedo = vec![color; triangles.len()];
        Self::new(vertices, normals, triangles, albedo).expect("valid cuboid mesh")
    }

    /// UV sphere centered `radius` above the local origin.
    pub fn sphere(radius: f64, segments: u32, rings: u32, color: Rgb) -> Self {
        let segments = segments.max(3);
        let rings = rings.max(2);
        let mut vertices = Vec::new();
        let mut normals = Vec::new();
        for r in 0..=rings {
            let theta = PI * r as f64 / rings as f64;
            for s in 0..segments {
                let phi = 2.0 * PI * s as f64 / segments as f64;
                let n = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                vertices.push(n * radius + Vector3::new(0.0, 0.0, radius));
                normals.push(n);
            }
        }
        let idx = |r: u32, s: u32| r * segments + s % segments;
        let mut triangles = Vec::new();
        for r in 0..rings {
            for s in 0..segments {
                let (a, b, c, d) = (idx(r, s), idx(r, s + 1), idx(r + 1, s), idx(r + 1, s + 1));
                if r != 0 {
                    triangles.push([a, c, b]);
                }
                if r + 1 != rings {
                    triangles.push([b, c, d]);
                }
            }
        }
        let albedo = vec![color; triangles.len()];
        Self::new(vertices, normals, triangles, albedo).expect("valid sphere mesh")
    }

    /// Closed frustum standing on the local origin (a cylinder when both radii match).
    pub fn frustum(bottom_radius: f64, top_radius: f64, height: f64, segments: u32, color: Rgb) -> Self {
        let segments = segments.max(3);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(Vector3::new(bottom_radius * phi.cos(), bottom_radius * phi.sin(), 0.0));
        }
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(Vector3::new(top_radius * phi.cos(), top_radius * phi.sin(), height));
        }
        let bottom_center = vertices.len() as u32;
        vertices.push(Vector3::zeros());
        let top_center = vertices.len() as u32;
        vertices.push(Vector3::new(0.0, 0.0, height));
        for s in 0..segments {
            let (a, b) = (s, (s + 1) % segments);
            let (c, d) = (a + segments, b + segments);
            triangles.push([a, b, d]);
            triangles.push([a, d, c]);
            triangles.push([bottom_center, b, a]);
            triangles.push([top_center, c, d]);
        }
        let albedo = vec![color; triangles.len()];
        Self::with_computed_normals(vertices, triangles, albedo).expect("valid frustum mesh")
    }

    pub fn from_obj(path: &Path) -> Result<Self, RenderError> {
        let (models, materials) = tobj::load_obj(
            path,
            &tobj::LoadOptions { triangulate: true, single_index: true, ..Default::default() },
        )
        .map_err(|e| RenderError::Obj(format!("{}: {e}", path.display())))?;
        let materials = materials.unwrap_or_default();

        let mut vertices = Vec::new();
        let mut normals = Vec::new();
        let mut triangles = Vec::new();
        let mut albedo = Vec::new();
        let mut any_missing_normals = false;
        for model in &models {
            let m = &model.mesh;
            let base = vertices.len() as u32;
            for p in m.positions.chunks_exact(3) {
                vertices.push(Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64));
            }
            if m.normals.len() == m.positions.len() {
                for n in m.normals.chunks_exact(3) {
                    let n = Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64);
                    normals.push(if n.norm() > 0.0 { n.normalize() } else { Vector3::z() });
                }
            } else {
                any_missing_normals = true;
                normals.extend(std::iter::repeat_n(Vector3::z(), m.positions.len() / 3));
            }
            let color = m
                .material_id
                .and_then(|id| materials.get(id))
                .and_then(|mat| mat.diffuse)
                .map(|d| [d[0] as f64, d[1] as f64, d[2] as f64])
                .unwrap_or(DEFAULT_ALBEDO);
            for t in m.indices.chunks_exact(3) {
                triangles.push([base + t[0], base + t[1], base + t[2]]);
                albedo.push(color);
            }
        }
        if any_missing_normals {
            Self::with_computed_normals(vertices, triangles, albedo)
        } else {
            Self::new(vertices, normals, triangles, albedo)
        }
    }

    /// Wavefront OBJ text plus the companion MTL text (one material per distinct albedo).
    pub fn to_obj(&self, mtl_name: &str) -> (String, String) {
        let mut palette: Vec<Rgb> = Vec::new();
        for c in &self.albedo {
            if !palette.contains(c) {
                palette.push(*c);
            }
        }
        let mut obj = format!("mtllib {mtl_name}\n");
        for v in &self.vertices {
            let _ = writeln!(obj, "v {} {} {}", v.x, v.y, v.z);
        }
        for n in &self.normals {
            let _ = writeln!(obj, "vn {} {} {}", n.x, n.y, n.z);
        }
        let mut current = usize::MAX;
        for (t, c) in self.triangles.iter().zip(&self.albedo) {
            let m = palette.iter().position(|p| p == c).unwrap();
            if m != current {
                let _ = writeln!(obj, "usemtl m{m}");
                current = m;
            }
            let [a, b, c] = t.map(|i| i + 1);
            let _ = writeln!(obj, "f {a}//{a} {b}//{b} {c}//{c}");
        }
        let mut mtl = String::new();
        for (i, c) in palette.iter().enumerate() {
            let _ = writeln!(mtl, "newmtl m{i}\nKd {} {} {}\n", c[0], c[1], c[2]);
        }
        (obj, mtl)
    }
}
