use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::PlacementError;

/// Ground-plane polygon in the ego frame, vertices in order.
pub type Polygon = Vec<[f64; 2]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockState {
    Locked,
    Unlocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkingSpot {
    pub polygon: Polygon,
    pub available: bool,
    #[serde(default)]
    pub lock_state: Option<LockState>,
}

impl ParkingSpot {
    /// Spots that may receive a ground lock.
    pub fn accepts_lock(&self) -> bool {
        self.available && self.lock_state.is_none()
    }
}

/// Where assets may be placed, ego frame, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionOfInterest {
    /// x in [-longitudinal, longitudinal], y in [-lateral, lateral].
    Rectangle { longitudinal: f64, lateral: f64 },
    Annulus { r_min: f64, r_max: f64 },
    /// Explicit spots; when empty, the scene's eligible parking labels are used.
    ParkingSpots {
        #[serde(default)]
        spots: Vec<Polygon>,
    },
}

impl RegionOfInterest {
    pub fn validate(&self) -> Result<(), PlacementError> {
        let bad = |m: &str| Err(PlacementError::InvalidRegion(m.to_string()));
        match self {
            Self::Rectangle { longitudinal, lateral } => {
                if !(*longitudinal > 0.0 && *lateral > 0.0) || !longitudinal.is_finite() || !lateral.is_finite() {
                    return bad("rectangle extents must be positive");
                }
            }
            Self::Annulus { r_min, r_max } => {
                if !(*r_min >= 0.0 && r_max > r_min && r_max.is_finite()) {
                    return bad("annulus needs 0 <= r_min < r_max");
                }
            }
            Self::ParkingSpots { spots } => {
                for p in spots {
                    validate_polygon(p)?;
                }
            }
        }
        Ok(())
    }

    /// Point membership; parking regions test against `spots`.
    pub fn contains(&self, p: &Vector2<f64>, spots: &[Polygon]) -> bool {
        match self {
            Self::Rectangle { longitudinal, lateral } => p.x.abs() <= *longitudinal && p.y.abs() <= *lateral,
            Self::Annulus { r_min, r_max } => {
                let r = p.norm();
                r >= *r_min && r <= *r_max
            }
            Self::ParkingSpots { .. } => spots.iter().any(|s| polygon_contains(s, p)),
        }
    }
}

pub fn validate_polygon(p: &[[f64; 2]]) -> Result<(), PlacementError> {
    if p.len() < 3 {
        return Err(PlacementError::InvalidRegion("polygon needs at least 3 vertices".into()));
    }
    if p.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PlacementError::InvalidRegion("polygon vertex not finite".into()));
    }
    if signed_area(p).abs() < 1e-9 {
        return Err(PlacementError::InvalidRegion("polygon has zero area".into()));
    }
    let n = p.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if !adjacent && segments_intersect(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]) {
                return Err(PlacementError::InvalidRegion("polygon self-intersects".into()));
            }
        }
    }
    Ok(())
}

pub fn signed_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Area centroid.
pub fn polygon_centroid(p: &[[f64; 2]]) -> Vector2<f64> {
    let n = p.len();
    let a = signed_area(p);
    let mut c = Vector2::zeros();
    for i in 0..n {
        let (u, v) = (p[i], p[(i + 1) % n]);
        let cross = u[0] * v[1] - v[0] * u[1];
        c += Vector2::new(u[0] + v[0], u[1] + v[1]) * cross;
    }
    c / (6.0 * a)
}

/// Direction of the longest edge, as a yaw.
pub fn polygon_axis(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    let (mut best, mut yaw) = (-1.0, 0.0);
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = dx.hypot(dy);
        if len > best + 1e-12 {
            best = len;
            yaw = dy.atan2(dx);
        }
    }
    crate::geometry::normalize_angle(yaw)
}

/// Even-odd rule.
pub fn polygon_contains(p: &[[f64; 2]], q: &Vector2<f64>) -> bool {
    let n = p.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (p[i], p[j]);
        if (a[1] > q.y) != (b[1] > q.y) && q.x < (b[0] - a[0]) * (q.y - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return true;
    }
    let on = |p: [f64; 2], q: [f64; 2], r: [f64; 2], o: f64| {
        o == 0.0 && r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}
