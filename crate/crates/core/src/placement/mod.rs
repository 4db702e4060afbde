//! Deciding how many assets to insert, from which groups, and where.

mod footprint;
mod occlusion;
mod region;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, CameraModel, Cuboid3D, RigidTransform};
use crate::render::{MeshAsset, PostprocessParams};

pub use footprint::{collides, Footprint};
pub use occlusion::{occlusion_fraction, OcclusionScene, FULL_OCCLUSION_THRESHOLD};
pub(crate) use occlusion::silhouette_samples;
pub use region::{
    polygon_axis, polygon_centroid, polygon_contains, validate_polygon, LockState, ParkingSpot, Polygon,
    RegionOfInterest,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("candidate is outside every camera's field of view")]
    NotVisible,
    #[error("invalid placement policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("group {0} has positive probability but no assets")]
    EmptyGroup(usize),
}

fn default_attempts() -> u32 {
    10
}
fn default_sigma() -> f64 {
    0.15
}
fn default_occlusion() -> f64 {
    FULL_OCCLUSION_THRESHOLD
}

/// Two-level categorical policy: count first, then groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementPolicy {
    /// `(n, p(n))` pairs with n >= 1.
    pub count_distribution: Vec<(u32, f64)>,
    /// p(g), indexed by catalog group.
    pub group_distribution: Vec<f64>,
    pub region: RegionOfInterest,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_sigma")]
    pub parking_noise_sigma: f64,
    #[serde(default = "default_occlusion")]
    pub occlusion_threshold: f64,
}

impl PlacementPolicy {
    pub fn new(count_distribution: Vec<(u32, f64)>, group_distribution: Vec<f64>, region: RegionOfInterest) -> Self {
        Self {
            count_distribution,
            group_distribution,
            region,
            max_attempts: default_attempts(),
            parking_noise_sigma: default_sigma(),
            occlusion_threshold: default_occlusion(),
        }
    }

    /// Check the policy and renormalize distributions whose mass is not 1.
    /// Returns one warning per renormalized distribution.
    pub fn validate(&mut self) -> Result<Vec<String>, PlacementError> {
        let bad = |m: String| Err(PlacementError::InvalidPolicy(m));
        if self.count_distribution.is_empty() || self.group_distribution.is_empty() {
            return bad("distributions must be non-empty".into());
        }
        let mut ns: Vec<u32> = self.count_distribution.iter().map(|(n, _)| *n).collect();
        if ns.contains(&0) {
            return bad("asset counts start at 1".into());
        }
        ns.sort_unstable();
        ns.dedup();
        if ns.len() != self.count_distribution.len() {
            return bad("duplicate asset count".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        if !(self.parking_noise_sigma >= 0.0 && self.parking_noise_sigma.is_finite()) {
            return bad("parking_noise_sigma must be >= 0".into());
        }
        if !(self.occlusion_threshold > 0.0 && self.occlusion_threshold <= 1.0) {
            return bad("occlusion_threshold must lie in (0, 1]".into());
        }
        self.region.validate()?;
        let mut warnings = Vec::new();
        let mut count_p: Vec<f64> = self.count_distribution.iter().map(|(_, p)| *p).collect();
        if let Some(w) = renormalize("count_distribution", &mut count_p)? {
            warnings.push(w);
        }
        for ((_, p), q) in self.count_distribution.iter_mut().zip(count_p) {
            *p = q;
        }
        if let Some(w) = renormalize("group_distribution", &mut self.group_distribution)? {
            warnings.push(w);
        }
        Ok(warnings)
    }

    /// Expected asset count, Σ p(n)·n.
    pub fn mean_count(&self) -> f64 {
        self.count_distribution.iter().map(|(n, p)| *n as f64 * p).sum()
    }
}

fn renormalize(name: &str, p: &mut [f64]) -> Result<Option<String>, PlacementError> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(PlacementError::InvalidPolicy(format!("{name}: probabilities must be finite and >= 0")));
    }
    let sum: f64 = p.iter().sum();
    if sum <= 0.0 {
        return Err(PlacementError::InvalidPolicy(format!("{name}: zero total mass")));
    }
    if (sum - 1.0).abs() <= 1e-9 {
        return Ok(None);
    }
    p.iter_mut().for_each(|v| *v /= sum);
    let msg = format!("{name} summed to {sum}; renormalized");
    log::warn!("{msg}");
    Ok(Some(msg))
}

pub fn sample_count(policy: &PlacementPolicy, rng: &mut impl Rng) -> u32 {
    let dist = WeightedIndex::new(policy.count_distribution.iter().map(|(_, p)| *p))
        .expect("policy validated");
    policy.count_distribution[dist.sample(rng)].0
}

/// Largest-remainder apportionment of `n` over `p`. Ties in the remainder go
/// to the lower group index.
pub fn allocate_groups(n: u32, p: &[f64]) -> Vec<u32> {
    let quotas: Vec<f64> = p.iter().map(|pg| n as f64 * pg).collect();
    let mut counts: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let assigned: u32 = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    let rem = |i: usize| quotas[i] - quotas[i].floor();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() <= 1e-12 {
            a.cmp(&b)
        } else {
            rb.total_cmp(&ra)
        }
    });
    for &g in order.iter().cycle().take(n.saturating_sub(assigned) as usize) {
        counts[g] += 1;
    }
    counts
}

/// Systematic-sampling apportionment: each n_g is floor or ceil of n·p(g),
/// Σ n_g = n, and E[n_g] = n·p(g) exactly.
pub fn allocate_groups_stochastic(n: u32, p: &[f64], rng: &mut impl Rng) -> Vec<u32> {
    let u: f64 = rng.random();
    let total: f64 = p.iter().sum();
    let mut cum = 0.0;
    let mut prev = 0i64;
    let last = p.len().saturating_sub(1);
    p.iter()
        .enumerate()
        .map(|(g, pg)| {
            cum += pg;
            let c = if g == last { n as f64 } else { n as f64 * cum / total };
            let k = (c - u).ceil() as i64;
            let out = (k - prev).max(0) as u32;
            prev = k.max(prev);
            out
        })
        .collect()
}

/// Asset as listed in the catalog.
#[derive(Debug, Clone)]
pub struct AssetSpec {
    pub id: String,
    pub class_label: String,
    pub mesh: Arc<MeshAsset>,
    pub lock_state: Option<LockState>,
}

#[derive(Debug, Clone)]
pub struct AssetGroup {
    pub name: String,
    /// Semantic label written into freespace bins.
    pub rdm_label: String,
    pub assets: Vec<AssetSpec>,
}

#[derive(Debug, Clone, Default)]
pub struct AssetCatalog {
    pub groups: Vec<AssetGroup>,
}

/// Everything about the real scene that constrains placement.
#[derive(Debug, Clone)]
pub struct SceneContext<'a> {
    pub cameras: &'a [CameraModel],
    pub cuboids: &'a [Cuboid3D],
    pub parking: &'a [ParkingSpot],
    /// Footprint of the ego vehicle itself.
    pub ego: Option<Footprint>,
    pub ground_z: f64,
    /// Copied into every placed instance.
    pub post: PostprocessParams,
}

impl<'a> SceneContext<'a> {
    pub fn new(cameras: &'a [CameraModel], cuboids: &'a [Cuboid3D]) -> Self {
        Self {
            cameras,
            cuboids,
            parking: &[],
            ego: Some(default_ego_footprint()),
            ground_z: 0.0,
            post: PostprocessParams::default(),
        }
    }
}

/// Typical passenger car, origin at the rear axle.
pub fn default_ego_footprint() -> Footprint {
    Footprint::new(Vector2::new(1.4, 0.0), Vector2::new(2.45, 1.0), 0.0)
}

#[derive(Debug, Clone)]
pub struct AssetInstance {
    pub asset_id: String,
    pub group: usize,
    pub class_label: String,
    pub rdm_label: String,
    /// asset -> ego
    pub pose: RigidTransform,
    pub footprint: Footprint,
    pub mesh: Arc<MeshAsset>,
    pub post: PostprocessParams,
    pub lock_state: Option<LockState>,
    /// Per camera: 1 - occluded fraction, `None` where not visible.
    pub visibility: Vec<Option<f64>>,
}

impl AssetInstance {
    /// Tight yaw-aligned box of the posed mesh.
    pub fn cuboid(&self) -> Cuboid3D {
        posed_box(&self.mesh, &self.pose, &self.class_label)
    }
}

fn posed_box(mesh: &MeshAsset, pose: &RigidTransform, label: &str) -> Cuboid3D {
    let (lo, hi) = (mesh.bbox_min(), mesh.bbox_max());
    let center = pose.transform_point(&((lo + hi) * 0.5));
    let d = hi - lo;
    occlusion::pose_box(center, [d.x, d.y, d.z], pose.yaw(), label)
}

/// Ground rectangle under the posed mesh bounding box.
pub fn instance_footprint(mesh: &MeshAsset, pose: &RigidTransform) -> Footprint {
    Footprint::from_cuboid(&posed_box(mesh, pose, ""))
}

/// Draw a pose for `mesh`. `spots` are the eligible parking polygons, used
/// only by the parking region.
pub fn sample_pose(
    region: &RegionOfInterest,
    mesh: &MeshAsset,
    ground_z: f64,
    spots: &[Polygon],
    parking_sigma: f64,
    rng: &mut impl Rng,
) -> Option<RigidTransform> {
    let (xy, yaw) = match region {
        RegionOfInterest::Rectangle { longitudinal, lateral } => {
            let x = rng.random_range(-longitudinal..=*longitudinal);
            let y = rng.random_range(-lateral..=*lateral);
            (Vector2::new(x, y), uniform_yaw(rng))
        }
        RegionOfInterest::Annulus { r_min, r_max } => {
            let r = rng.random_range(r_min * r_min..=r_max * r_max).sqrt();
            let th = rng.random_range(-PI..PI);
            (Vector2::new(r * th.cos(), r * th.sin()), uniform_yaw(rng))
        }
        RegionOfInterest::ParkingSpots { .. } => {
            if spots.is_empty() {
                return None;
            }
            let spot = &spots[rng.random_range(0..spots.len())];
            let mut c = polygon_centroid(spot);
            if parking_sigma > 0.0 {
                let noise = Normal::new(0.0, parking_sigma).expect("sigma validated");
                c += Vector2::new(noise.sample(rng), noise.sample(rng));
            }
            (c, polygon_axis(spot))
        }
    };
    let z = ground_z - mesh.bbox_min().z;
    Some(RigidTransform::from_yaw(yaw, Vector3::new(xy.x, xy.y, z)))
}

fn uniform_yaw(rng: &mut impl Rng) -> f64 {
    normalize_angle(rng.random_range(-PI..PI))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementStats {
    pub requested: u32,
    pub placed: u32,
    pub attempts: u32,
    pub skipped: u32,
    pub rejected_collision: u32,
    pub rejected_visibility: u32,
    pub placed_per_group: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Placement {
    pub instances: Vec<AssetInstance>,
    pub stats: PlacementStats,
}

/// Parking polygons a lock may go into for this scene.
pub fn eligible_spots(region: &RegionOfInterest, parking: &[ParkingSpot]) -> Vec<Polygon> {
    match region {
        RegionOfInterest::ParkingSpots { spots } if !spots.is_empty() => spots.clone(),
        RegionOfInterest::ParkingSpots { .. } => {
            parking.iter().filter(|s| s.accepts_lock()).map(|s| s.polygon.clone()).collect()
        }
        _ => Vec::new(),
    }
}

/// Sample, check and accept instances one at a time. `policy` must have been
/// validated.
pub fn place_assets(
    policy: &PlacementPolicy,
    catalog: &AssetCatalog,
    scene: &SceneContext,
    rng: &mut impl Rng,
) -> Result<Placement, PlacementError> {
    let groups = policy.group_distribution.len();
    if catalog.groups.len() < groups {
        return Err(PlacementError::InvalidPolicy(format!(
            "policy has {groups} groups, catalog {}",
            catalog.groups.len()
        )));
    }
    for (g, p) in policy.group_distribution.iter().enumerate() {
        if *p > 0.0 && catalog.groups[g].assets.is_empty() {
            return Err(PlacementError::EmptyGroup(g));
        }
    }
    let n = sample_count(policy, rng);
    let counts = allocate_groups_stochastic(n, &policy.group_distribution, rng);
    let spots = eligible_spots(&policy.region, scene.parking);

    let mut stats = PlacementStats { requested: n, placed_per_group: vec![0; groups], ..Default::default() };
    let mut obstacles: Vec<Footprint> = scene.cuboids.iter().map(Footprint::from_cuboid).collect();
    obstacles.extend(scene.ego);
    let mut occ = OcclusionScene::new(scene.cameras, scene.cuboids);
    let mut instances = Vec::new();

    for (g, &count) in counts.iter().enumerate() {
        let group = &catalog.groups[g];
        for _ in 0..count {
            let spec = &group.assets[rng.random_range(0..group.assets.len())];
            let mut accepted = None;
            for _ in 0..policy.max_attempts {
                stats.attempts += 1;
                let Some(pose) =
                    sample_pose(&policy.region, &spec.mesh, scene.ground_z, &spots, policy.parking_noise_sigma, rng)
                else {
                    break;
                };
                let fp = instance_footprint(&spec.mesh, &pose);
                if !policy.region.contains(&fp.center(), &spots) || collides(&fp, &obstacles) {
                    stats.rejected_collision += 1;
                    continue;
                }
                let cuboid = posed_box(&spec.mesh, &pose, &spec.class_label);
                let visibility: Vec<Option<f64>> = (0..scene.cameras.len())
                    .map(|c| occ.occlusion_fraction(&cuboid, c).ok())
                    .map(|f| f.filter(|f| *f < policy.occlusion_threshold).map(|f| 1.0 - f))
                    .collect();
                if visibility.iter().all(Option::is_none) {
                    stats.rejected_visibility += 1;
                    continue;
                }
                accepted = Some((pose, fp, cuboid, visibility));
                break;
            }
            let Some((pose, fp, cuboid, visibility)) = accepted else {
                stats.skipped += 1;
                continue;
            };
            obstacles.push(fp);
            occ.push(&cuboid);
            stats.placed += 1;
            stats.placed_per_group[g] += 1;
            instances.push(AssetInstance {
                asset_id: spec.id.clone(),
                group: g,
                class_label: spec.class_label.clone(),
                rdm_label: group.rdm_label.clone(),
                pose,
                footprint: fp,
                mesh: spec.mesh.clone(),
                post: scene.post.clone(),
                lock_state: spec.lock_state,
                visibility,
            });
        }
    }
    Ok(Placement { instances, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Resolution;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rect_region() -> RegionOfInterest {
        RegionOfInterest::Rectangle { longitudinal: 12.0, lateral: 6.0 }
    }

    /// Four wide pinhole cameras looking out to each side.
    pub(crate) fn ring_cameras() -> Vec<CameraModel> {
        (0..4)
            .map(|k| {
                let yaw = k as f64 * PI / 2.0;
                CameraModel::pinhole(
                    24.0,
                    24.0,
                    [32.0, 24.0],
                    Resolution { width: 64, height: 48 },
                    RigidTransform::camera_mount(Vector3::new(1.4, 0.0, 1.6), yaw, 0.2),
                )
                .unwrap()
            })
            .collect()
    }

    fn catalog(groups: usize) -> AssetCatalog {
        let mesh = Arc::new(MeshAsset::cuboid(1.0, 1.0, 1.0, [0.5; 3]));
        AssetCatalog {
            groups: (0..groups)
                .map(|g| AssetGroup {
                    name: format!("g{g}"),
                    rdm_label: "hazard".into(),
                    assets: vec![AssetSpec {
                        id: format!("cube{g}"),
                        class_label: "hazard".into(),
                        mesh: mesh.clone(),
                        lock_state: None,
                    }],
                })
                .collect(),
        }
    }

    #[test]
    fn degenerate_count_distribution() {
        let policy = PlacementPolicy::new(vec![(2, 1.0)], vec![1.0], rect_region());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| sample_count(&policy, &mut rng) == 2));
    }

    #[test]
    fn mean_count_formula() {
        let policy = PlacementPolicy::new(vec![(1, 0.25), (2, 0.25), (3, 0.25), (4, 0.25)], vec![1.0], rect_region());
        assert_eq!(policy.mean_count(), 2.5);
    }

    #[test]
    fn sample_count_mean_matches() {
        let policy = PlacementPolicy::new(vec![(1, 0.5), (3, 0.5)], vec![1.0], rect_region());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 100_000;
        let mean = (0..m).map(|_| sample_count(&policy, &mut rng) as f64).sum::<f64>() / m as f64;
        assert!((1.98..=2.02).contains(&mean), "{mean}");
    }

    #[test]
    fn allocate_examples() {
        assert_eq!(allocate_groups(4, &[0.5, 0.5]), vec![2, 2]);
        assert_eq!(allocate_groups(3, &[0.5, 0.5]), vec![2, 1]);
        assert_eq!(allocate_groups(1, &[0.9, 0.1]), vec![1, 0]);
    }

    #[test]
    fn renormalizes_with_warning() {
        let mut policy = PlacementPolicy::new(vec![(1, 1.0)], vec![0.4, 0.3, 0.2, 0.2], rect_region());
        let w = policy.validate().unwrap();
        assert_eq!(w.len(), 1);
        assert!((policy.group_distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((policy.group_distribution[0] - 0.4 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn invalid_policies_rejected() {
        let mut p = PlacementPolicy::new(vec![(0, 1.0)], vec![1.0], rect_region());
        assert!(p.validate().is_err());
        let mut p = PlacementPolicy::new(vec![(1, 0.5), (1, 0.5)], vec![1.0], rect_region());
        assert!(p.validate().is_err());
        let mut p = PlacementPolicy::new(vec![(1, 1.0)], vec![-1.0, 2.0], rect_region());
        assert!(p.validate().is_err());
    }

    #[test]
    fn rectangle_samples_in_bounds() {
        let mesh = MeshAsset::cuboid(1.0, 1.0, 1.0, [0.5; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let pose = sample_pose(&rect_region(), &mesh, 0.0, &[], 0.0, &mut rng).unwrap();
            let t = pose.translation();
            assert!(t.x.abs() <= 12.0 && t.y.abs() <= 6.0);
            let yaw = pose.yaw();
            assert!(yaw > -PI && yaw <= PI);
        }
    }

    #[test]
    fn parking_zero_noise_hits_centroid() {
        let spot = vec![[10.0, 2.0], [15.0, 2.0], [15.0, 4.5], [10.0, 4.5]];
        let region = RegionOfInterest::ParkingSpots { spots: vec![spot.clone()] };
        let mesh = MeshAsset::cuboid(0.5, 0.3, 0.2, [0.5; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = sample_pose(&region, &mesh, 0.0, &[spot], 0.0, &mut rng).unwrap();
        assert_eq!(pose.translation().xy(), Vector2::new(12.5, 3.25));
    }

    #[test]
    fn grounding_offsets_by_bbox_min() {
        // Local bbox min z = -0.2.
        let mesh = MeshAsset::new(
            vec![Vector3::new(0.0, 0.0, -0.2), Vector3::new(1.0, 0.0, -0.2), Vector3::new(0.0, 1.0, 0.5)],
            vec![Vector3::z(); 3],
            vec![[0, 1, 2]],
            vec![[0.5; 3]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = sample_pose(&rect_region(), &mesh, 0.0, &[], 0.0, &mut rng).unwrap();
        assert!((pose.translation().z - 0.2).abs() < 1e-12);
        let lowest = mesh.vertices().iter().map(|v| pose.transform_point(v).z).fold(f64::INFINITY, f64::min);
        assert!(lowest.abs() < 1e-4);
    }

    #[test]
    fn empty_scene_places_exactly_three() {
        let mut policy = PlacementPolicy::new(vec![(3, 1.0)], vec![1.0], rect_region());
        policy.validate().unwrap();
        let cams = ring_cameras();
        let scene = SceneContext::new(&cams, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = place_assets(&policy, &catalog(1), &scene, &mut rng).unwrap();
        assert_eq!(out.instances.len(), 3);
        assert_eq!(out.stats.placed_per_group, vec![3]);
        for (i, a) in out.instances.iter().enumerate() {
            for b in &out.instances[i + 1..] {
                assert!(!a.footprint.intersects(&b.footprint));
            }
        }
    }

    #[test]
    fn blocked_region_places_nothing() {
        let mut policy = PlacementPolicy::new(vec![(2, 1.0)], vec![1.0], rect_region());
        policy.validate().unwrap();
        let cams = ring_cameras();
        let wall = [Cuboid3D::new(Vector3::new(0.0, 0.0, 1.0), [40.0, 20.0, 2.0], 0.0, "building").unwrap()];
        let scene = SceneContext::new(&cams, &wall);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = place_assets(&policy, &catalog(1), &scene, &mut rng).unwrap();
        assert!(out.instances.is_empty());
        assert_eq!(out.stats.skipped, 2);
        assert_eq!(out.stats.attempts, 20);
    }

    #[test]
    fn placement_is_deterministic() {
        let mut policy = PlacementPolicy::new(vec![(1, 0.5), (3, 0.5)], vec![0.5, 0.5], rect_region());
        policy.validate().unwrap();
        let cams = ring_cameras();
        let scene = SceneContext::new(&cams, &[]);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            place_assets(&policy, &catalog(2), &scene, &mut rng)
                .unwrap()
                .instances
                .iter()
                .map(|i| (i.group, *i.pose.translation(), i.pose.yaw()))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn footprint_contains_mesh_projection() {
        let mesh = MeshAsset::sphere(0.7, 12, 8, [0.5; 3]);
        let pose = RigidTransform::from_yaw(0.9, Vector3::new(4.0, -2.0, 0.0));
        let fp = instance_footprint(&mesh, &pose);
        let shrink = |p: Vector2<f64>| fp.center() + (p - fp.center()) * (1.0 - 1e-9);
        for v in mesh.vertices() {
            let w = pose.transform_point(v);
            assert!(fp.contains(&shrink(w.xy())));
        }
    }

    proptest! {
        #[test]
        fn allocation_conserves_total(n in 1u32..200, raw in prop::collection::vec(0.0f64..1.0, 1..8), seed in any::<u64>()) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-6);
            let p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            prop_assert_eq!(allocate_groups(n, &p).iter().sum::<u32>(), n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = allocate_groups_stochastic(n, &p, &mut rng);
            prop_assert_eq!(s.iter().sum::<u32>(), n);
            for (c, q) in s.iter().zip(&p) {
                let quota = n as f64 * q;
                prop_assert!(*c as f64 >= quota.floor() - 1e-9 && *c as f64 <= quota.ceil() + 1e-9);
            }
        }
    }
}
