use nalgebra::{Rotation2, Vector2};
use serde::{Deserialize, Serialize};

use crate::geometry::Cuboid3D;

/// Yaw-oriented rectangle on the ground plane (ego frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
    pub yaw: f64,
}

impl Footprint {
    pub fn new(center: Vector2<f64>, half_extents: Vector2<f64>, yaw: f64) -> Self {
        Self { center: center.into(), half_extents: half_extents.into(), yaw }
    }

    pub fn from_cuboid(c: &Cuboid3D) -> Self {
        Self::new(
            Vector2::new(c.center[0], c.center[1]),
            Vector2::new(c.dimensions[0] / 2.0, c.dimensions[1] / 2.0),
            c.yaw,
        )
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::from(self.center)
    }

    /// Unit local x and y axes in the ego frame.
    pub fn axes(&self) -> [Vector2<f64>; 2] {
        let (s, c) = self.yaw.sin_cos();
        [Vector2::new(c, s), Vector2::new(-s, c)]
    }

    /// Counter-clockwise corners.
    pub fn corners(&self) -> [Vector2<f64>; 4] {
        let r = Rotation2::new(self.yaw);
        let [hx, hy] = self.half_extents;
        let c = self.center();
        [(hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy)].map(|(x, y)| c + r * Vector2::new(x, y))
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let d = p - self.center();
        let [ax, ay] = self.axes();
        d.dot(&ax).abs() <= self.half_extents[0] && d.dot(&ay).abs() <= self.half_extents[1]
    }

    /// Separating-axis test over the four edge normals. Touching counts as
    /// intersecting.
    pub fn intersects(&self, other: &Footprint) -> bool {
        self.penetration(other).is_some()
    }

    /// Smallest overlap of the projections over all candidate axes, or `None`
    /// when a separating axis exists.
    pub fn penetration(&self, other: &Footprint) -> Option<f64> {
        let a = self.corners();
        let b = other.corners();
        let mut min_overlap = f64::INFINITY;
        for axis in self.axes().into_iter().chain(other.axes()) {
            let (amin, amax) = project(&a, &axis);
            let (bmin, bmax) = project(&b, &axis);
            let overlap = amax.min(bmax) - amin.max(bmin);
            if overlap < 0.0 {
                return None;
            }
            min_overlap = min_overlap.min(overlap);
        }
        Some(min_overlap)
    }
}

fn project(corners: &[Vector2<f64>; 4], axis: &Vector2<f64>) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        let d = c.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// True iff `candidate` intersects any footprint in `others`.
pub fn collides(candidate: &Footprint, others: &[Footprint]) -> bool {
    others.iter().any(|o| candidate.intersects(o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn square(x: f64, y: f64, yaw: f64) -> Footprint {
        Footprint::new(Vector2::new(x, y), Vector2::new(0.5, 0.5), yaw)
    }

    #[test]
    fn identical_footprints_collide() {
        assert!(collides(&square(1.0, 2.0, 0.3), &[square(1.0, 2.0, 0.3)]));
    }

    #[test]
    fn far_apart_do_not_collide() {
        assert!(!collides(&square(0.0, 0.0, 0.0), &[square(100.0, 0.0, 0.0)]));
        assert!(!collides(&square(0.0, 0.0, 0.0), &[]));
    }

    #[test]
    fn rotated_square_near_miss_and_hit() {
        // Diamond reaches sqrt(2)/2 ~ 0.707 toward the axis-aligned square's face at 0.5.
        let a = square(0.0, 0.0, 0.0);
        assert!(!a.intersects(&square(1.3, 0.0, FRAC_PI_4)));
        assert!(a.intersects(&square(1.2, 0.0, FRAC_PI_4)));
        // Corner-to-corner: separated only along the diamond's own axes.
        assert!(!a.intersects(&square(1.3, 1.3, FRAC_PI_4)));
    }

    #[test]
    fn contains_matches_corners() {
        let f = Footprint::new(Vector2::new(3.0, -1.0), Vector2::new(2.0, 0.5), 0.7);
        for c in f.corners() {
            let inward = c + (f.center() - c) * 1e-9;
            assert!(f.contains(&inward));
            let outward = c + (c - f.center()) * 1e-3;
            assert!(!f.contains(&outward));
        }
    }
}
