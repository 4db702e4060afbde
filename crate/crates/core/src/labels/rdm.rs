use std::f64::consts::TAU;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geometry::Cuboid3D;
use crate::placement::Footprint;

/// Label of a bin with no obstacle.
pub const NO_LABEL: &str = "none";

fn default_max_range() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdmBin {
    /// Meters to the closest obstacle; `None` when unbounded.
    pub distance: Option<f64>,
    pub label: String,
}

/// Equiangular bins around the ego origin. Bin `b` covers azimuths
/// `[2πb/B, 2π(b+1)/B)` measured counter-clockwise from ego +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialDistanceMap {
    pub bins: Vec<RdmBin>,
    /// Stand-in distance for unbounded bins when scoring predictions.
    #[serde(default = "default_max_range")]
    pub max_range: f64,
}

impl RadialDistanceMap {
    /// `bins` unbounded bins.
    pub fn unbounded(bins: usize) -> Self {
        assert!(bins >= 1, "a radial distance map needs at least one bin");
        Self {
            bins: vec![RdmBin { distance: None, label: NO_LABEL.to_string() }; bins],
            max_range: default_max_range(),
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        TAU / self.bins.len() as f64
    }

    /// Bin containing azimuth `a` (radians, any range).
    pub fn bin_of(&self, a: f64) -> usize {
        let a = a.rem_euclid(TAU);
        ((a / self.bin_width()) as usize).min(self.bins.len() - 1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.bins.is_empty() {
            return Err("radial distance map has no bins".into());
        }
        if self.bins.iter().any(|b| b.distance.is_some_and(|d| !(d > 0.0 && d.is_finite()))) {
            return Err("bin distances must be positive".into());
        }
        Ok(())
    }
}

/// Lower every bin the cuboid's footprint reaches to the footprint's nearest
/// point within that bin, if nearer than what is stored.
pub fn rdm_update(rdm: &RadialDistanceMap, c: &Cuboid3D, label: &str) -> RadialDistanceMap {
    let mut out = rdm.clone();
    let corners = Footprint::from_cuboid(c).corners();
    let width = rdm.bin_width();
    for (b, bin) in out.bins.iter_mut().enumerate() {
        let a0 = b as f64 * width;
        let Some(d) = nearest_in_wedge(&corners, a0, a0 + width) else { continue };
        let d = d.max(1e-6);
        let replace = match bin.distance {
            None => true,
            Some(s) => d < s || (d == s && label < bin.label.as_str()),
        };
        if replace {
            bin.distance = Some(d);
            bin.label = label.to_string();
        }
    }
    out
}

fn in_wedge(p: &Vector2<f64>, a0: f64, a1: f64) -> bool {
    if p.norm() == 0.0 {
        return true;
    }
    let a = p.y.atan2(p.x).rem_euclid(TAU);
    let eps = 1e-12;
    (a >= a0 - eps && a <= a1 + eps) || (a1 >= TAU - eps && a <= eps)
}

/// Distance from the origin to the nearest point of the convex polygon inside
/// the closed wedge `[a0, a1]`, or `None` if they do not meet.
fn nearest_in_wedge(poly: &[Vector2<f64>; 4], a0: f64, a1: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut take = |d: f64| best = Some(best.map_or(d, |b: f64| b.min(d)));
    let rays = [Vector2::new(a0.cos(), a0.sin()), Vector2::new(a1.cos(), a1.sin())];
    let inside_origin = convex_contains(poly, &Vector2::zeros());
    if inside_origin {
        take(0.0);
    }
    for i in 0..4 {
        let (p, q) = (poly[i], poly[(i + 1) % 4]);
        if in_wedge(&p, a0, a1) {
            take(p.norm());
        }
        let e = q - p;
        let len2 = e.norm_squared();
        if len2 > 0.0 {
            let t = (-p.dot(&e) / len2).clamp(0.0, 1.0);
            let closest = p + e * t;
            if in_wedge(&closest, a0, a1) {
                take(closest.norm());
            }
        }
        for u in &rays {
            // Solve s u = p + t e with s >= 0, t in [0, 1].
            let den = u.x * (-e.y) - u.y * (-e.x);
            if den.abs() < 1e-15 {
                continue;
            }
            let s = (p.x * (-e.y) - p.y * (-e.x)) / den;
            let t = (u.x * p.y - u.y * p.x) / den;
            if s >= 0.0 && (0.0..=1.0).contains(&t) {
                take(s);
            }
        }
    }
    best
}

fn convex_contains(poly: &[Vector2<f64>; 4], p: &Vector2<f64>) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let (a, b) = (poly[i], poly[(i + 1) % 4]);
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}
