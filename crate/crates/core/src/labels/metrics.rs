use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Cuboid3D};

use super::rdm::RadialDistanceMap;

/// Relative radial error below which a detection can match.
pub const MAX_RELATIVE_RADIAL_ERROR: f64 = 0.10;
/// Yaw difference, in degrees, at or below which a detection can match.
pub const MAX_YAW_DIFFERENCE_DEG: f64 = 2.0;
/// Relative freespace gap below which a bin counts as a success.
pub const RDM_SUCCESS_GAP: f64 = 0.10;
pub const HAZARD_LABEL: &str = "hazard";
/// Ground-truth radius treated as zero when matching.
const ZERO_RADIUS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no ground truth: metrics are undefined")]
    NoGroundTruth,
    #[error("bin count mismatch: prediction {pred}, ground truth {gt}")]
    BinMismatch { pred: usize, gt: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCriteria {
    pub max_relative_radial_error: f64,
    /// Radians.
    pub max_yaw_difference: f64,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        Self {
            max_relative_radial_error: MAX_RELATIVE_RADIAL_ERROR,
            max_yaw_difference: MAX_YAW_DIFFERENCE_DEG.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCuboid {
    pub cuboid: Cuboid3D,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(prediction, ground truth)` index pairs.
    pub matches: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

/// Relative radial error, or `None` if the pair fails the match rule. The
/// radial rule is strict and the yaw rule inclusive.
pub fn match_error(pred: &Cuboid3D, gt: &Cuboid3D, criteria: &MatchCriteria) -> Option<f64> {
    if pred.class_label != gt.class_label {
        return None;
    }
    let dyaw = normalize_angle(pred.yaw - gt.yaw).abs();
    if dyaw > criteria.max_yaw_difference {
        return None;
    }
    let (rp, rg) = (pred.radial_distance(), gt.radial_distance());
    if rg <= ZERO_RADIUS {
        return (rp < ZERO_RADIUS).then_some(0.0);
    }
    let rel = (rp - rg).abs() / rg;
    (rel < criteria.max_relative_radial_error).then_some(rel)
}

/// Greedy one-to-one matching by ascending relative radial error, ties broken
/// by higher prediction score.
pub fn match_cuboids(predictions: &[ScoredCuboid], ground_truth: &[Cuboid3D], criteria: &MatchCriteria) -> Assignment {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in predictions.iter().enumerate() {
        for (gi, g) in ground_truth.iter().enumerate() {
            if let Some(e) = match_error(&p.cuboid, g, criteria) {
                pairs.push((e, pi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| predictions[b.1].score.total_cmp(&predictions[a.1].score))
            .then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
    });
    let mut pred_used = vec![false; predictions.len()];
    let mut gt_used = vec![false; ground_truth.len()];
    let mut out = Assignment::default();
    for (_, pi, gi) in pairs {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            out.matches.push((pi, gi));
        }
    }
    out.matches.sort_unstable();
    out.false_positives = (0..predictions.len()).filter(|i| !pred_used[*i]).collect();
    out.false_negatives = (0..ground_truth.len()).filter(|i| !gt_used[*i]).collect();
    out
}

/// Per-prediction outcome, the unit of accumulation across scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutcome {
    pub score: f64,
    pub true_positive: bool,
    /// Center distance (m) and |Δyaw| (rad) for true positives.
    pub position_error: f64,
    pub yaw_error: f64,
}

/// Associative, commutative accumulator of detection outcomes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionAccumulator {
    pub outcomes: Vec<ScoredOutcome>,
    pub ground_truth: usize,
}

impl DetectionAccumulator {
    pub fn from_assignment(a: &Assignment, predictions: &[ScoredCuboid], ground_truth: &[Cuboid3D]) -> Self {
        let mut outcomes: Vec<ScoredOutcome> = a
            .matches
            .iter()
            .map(|&(pi, gi)| {
                let (p, g) = (&predictions[pi].cuboid, &ground_truth[gi]);
                ScoredOutcome {
                    score: predictions[pi].score,
                    true_positive: true,
                    position_error: (p.center() - g.center()).norm(),
                    yaw_error: normalize_angle(p.yaw - g.yaw).abs(),
                }
            })
            .collect();
        outcomes.extend(a.false_positives.iter().map(|&pi| ScoredOutcome {
            score: predictions[pi].score,
            true_positive: false,
            position_error: 0.0,
            yaw_error: 0.0,
        }));
        Self { outcomes, ground_truth: ground_truth.len() }
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.outcomes.extend(other.outcomes);
        self.ground_truth += other.ground_truth;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub average_precision: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Mean center distance over true positives, meters.
    pub position_error: f64,
    /// Mean |Δyaw| over true positives, degrees.
    pub yaw_error_deg: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Ranking order: score descending; equal scores put false positives first so
/// the result does not depend on input order.
fn rank(a: &ScoredOutcome, b: &ScoredOutcome) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.true_positive.cmp(&b.true_positive))
}

/// All-points interpolated AP over the ranked outcomes, plus precision,
/// recall and F-score for predictions scoring at least `score_threshold`.
pub fn detection_metrics(acc: &DetectionAccumulator, score_threshold: f64) -> Result<DetectionMetrics, MetricsError> {
    if acc.ground_truth == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut ranked = acc.outcomes.clone();
    ranked.sort_by(rank);
    let n_gt = acc.ground_truth as f64;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for o in &ranked {
        if o.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push((tp as f64 / n_gt, tp as f64 / (tp + fp) as f64));
    }
    // Precision envelope from the right.
    for i in (0..curve.len().saturating_sub(1)).rev() {
        curve[i].1 = curve[i].1.max(curve[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in &curve {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }

    let kept: Vec<&ScoredOutcome> = ranked.iter().filter(|o| o.score >= score_threshold).collect();
    let tps: Vec<&&ScoredOutcome> = kept.iter().filter(|o| o.true_positive).collect();
    let n_tp = tps.len();
    let n_fp = kept.len() - n_tp;
    let precision = if kept.is_empty() { 0.0 } else { n_tp as f64 / kept.len() as f64 };
    let recall = n_tp as f64 / n_gt;
    let f_score = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let mean = |f: fn(&ScoredOutcome) -> f64| {
        if n_tp == 0 {
            0.0
        } else {
            tps.iter().map(|o| f(o)).sum::<f64>() / n_tp as f64
        }
    };
    Ok(DetectionMetrics {
        average_precision: ap,
        precision,
        recall,
        f_score,
        position_error: mean(|o| o.position_error),
        yaw_error_deg: mean(|o| o.yaw_error).to_degrees(),
        true_positives: n_tp,
        false_positives: n_fp,
        false_negatives: acc.ground_truth - n_tp,
    })
}

/// Associative, commutative accumulator over evaluated freespace bins.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RdmAccumulator {
    pub bins: usize,
    pub abs_gap_sum: f64,
    pub rel_gap_sum: f64,
    pub successes: usize,
    pub hazard_true_positives: usize,
    pub hazard_predicted: usize,
    pub hazard_actual: usize,
}

impl RdmAccumulator {
    pub fn merge(self, o: Self) -> Self {
        Self {
            bins: self.bins + o.bins,
            abs_gap_sum: self.abs_gap_sum + o.abs_gap_sum,
            rel_gap_sum: self.rel_gap_sum + o.rel_gap_sum,
            successes: self.successes + o.successes,
            hazard_true_positives: self.hazard_true_positives + o.hazard_true_positives,
            hazard_predicted: self.hazard_predicted + o.hazard_predicted,
            hazard_actual: self.hazard_actual + o.hazard_actual,
        }
    }

    pub fn finish(&self) -> RdmMetrics {
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let n = self.bins;
        RdmMetrics {
            bins_evaluated: n,
            abs_gap: (n > 0).then(|| self.abs_gap_sum / n as f64),
            rel_gap: (n > 0).then(|| self.rel_gap_sum / n as f64),
            success_rate: ratio(self.successes, n),
            hazard_precision: ratio(self.hazard_true_positives, self.hazard_predicted),
            hazard_recall: ratio(self.hazard_true_positives, self.hazard_actual),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdmMetrics {
    pub bins_evaluated: usize,
    pub abs_gap: Option<f64>,
    pub rel_gap: Option<f64>,
    pub success_rate: Option<f64>,
    pub hazard_precision: Option<f64>,
    pub hazard_recall: Option<f64>,
}

/// Accumulate the bins whose ground-truth distance is within `radius_limit`.
/// Unbounded predictions count as the prediction map's `max_range`.
pub fn rdm_accumulate(
    pred: &RadialDistanceMap,
    gt: &RadialDistanceMap,
    radius_limit: f64,
) -> Result<RdmAccumulator, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::BinMismatch { pred: pred.len(), gt: gt.len() });
    }
    let mut acc = RdmAccumulator::default();
    for (p, g) in pred.bins.iter().zip(&gt.bins) {
        let Some(rg) = g.distance.filter(|d| *d <= radius_limit) else { continue };
        let rp = p.distance.unwrap_or(pred.max_range);
        let gap = (rp - rg).abs();
        let rel = gap / rg;
        acc.bins += 1;
        acc.abs_gap_sum += gap;
        acc.rel_gap_sum += rel;
        acc.successes += (rel < RDM_SUCCESS_GAP) as usize;
        let (ph, gh) = (p.label == HAZARD_LABEL, g.label == HAZARD_LABEL);
        acc.hazard_predicted += ph as usize;
        acc.hazard_actual += gh as usize;
        acc.hazard_true_positives += (ph && gh) as usize;
    }
    Ok(acc)
}

pub fn rdm_metrics(pred: &RadialDistanceMap, gt: &RadialDistanceMap, radius_limit: f64) -> Result<RdmMetrics, MetricsError> {
    Ok(rdm_accumulate(pred, gt, radius_limit)?.finish())
}

/// Plain-text table, one row per class.
pub fn detection_table(rows: &[(String, DetectionMetrics)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>16} {:>12}", "Class", "AP", "Fscore", "Position Err(m)", "Yaw Err(deg)");
    for (name, m) in rows {
        let _ = writeln!(
            s,
            "{:<16} {:>8.4} {:>8.4} {:>16.4} {:>12.4}",
            name, m.average_precision, m.f_score, m.position_error, m.yaw_error_deg
        );
    }
    s
}

pub fn rdm_table(m: &RdmMetrics) -> String {
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    let mut s = String::new();
    let _ = writeln!(s, "{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "Bins", "AbsGap(m)", "RelGap", "Success", "HazPrec", "HazRec");
    let _ = writeln!(
        s,
        "{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        m.bins_evaluated,
        f(m.abs_gap),
        f(m.rel_gap),
        f(m.success_rate),
        f(m.hazard_precision),
        f(m.hazard_recall)
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::rdm::RdmBin;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn at(r: f64, yaw_deg: f64) -> Cuboid3D {
        Cuboid3D::new(Vector3::new(r, 0.0, 0.5), [1.0; 3], yaw_deg.to_radians(), "car").unwrap()
    }

    fn scored(c: Cuboid3D, score: f64) -> ScoredCuboid {
        ScoredCuboid { cuboid: c, score }
    }

    #[test]
    fn match_rule_examples() {
        let c = MatchCriteria::default();
        let gt = [at(10.0, 0.0)];
        let a = match_cuboids(&[scored(at(10.9, 1.0), 0.9)], &gt, &c);
        assert_eq!(a.matches, vec![(0, 0)]);
        let a = match_cuboids(&[scored(at(10.0, 3.0), 0.9)], &gt, &c);
        assert_eq!((a.false_positives.len(), a.false_negatives.len()), (1, 1));
        let a = match_cuboids(&[], &gt, &c);
        assert_eq!(a.false_negatives, vec![0]);
    }

    #[test]
    fn match_thresholds_at_below_above() {
        let c = MatchCriteria::default();
        let gt = at(10.0, 0.0);
        // Radial: strict at exactly 10 %.
        assert!(match_error(&at(10.99, 0.0), &gt, &c).is_some());
        assert!(match_error(&at(11.0, 0.0), &gt, &c).is_none());
        assert!(match_error(&at(11.01, 0.0), &gt, &c).is_none());
        // Yaw: inclusive at exactly 2 degrees.
        let exact = Cuboid3D { yaw: 2f64.to_radians(), ..gt.clone() };
        assert!(match_error(&exact, &gt, &c).is_some());
        assert!(match_error(&at(10.0, 1.99), &gt, &c).is_some());
        assert!(match_error(&at(10.0, 2.01), &gt, &c).is_none());
    }

    #[test]
    fn zero_radius_gt() {
        let c = MatchCriteria::default();
        let gt = Cuboid3D::new(Vector3::new(0.0, 0.0, 0.5), [1.0; 3], 0.0, "car").unwrap();
        assert!(match_error(&gt, &gt, &c).is_some());
        assert!(match_error(&at(0.1, 0.0), &gt, &c).is_none());
    }

    #[test]
    fn greedy_prefers_smaller_error() {
        let c = MatchCriteria::default();
        let gt = [at(10.0, 0.0)];
        let preds = [scored(at(10.5, 0.0), 0.9), scored(at(10.1, 0.0), 0.2)];
        let a = match_cuboids(&preds, &gt, &c);
        assert_eq!(a.matches, vec![(1, 0)]);
        assert_eq!(a.false_positives, vec![0]);
    }

    #[test]
    fn hand_enumerated_ap() {
        // Ranked TP(.9), FP(.8), TP(.7) against 2 gt:
        // (R, P) = (1/2, 1), (1/2, 1/2), (1, 2/3)  ->  AP = 1/2 * 1 + 1/2 * 2/3.
        let acc = DetectionAccumulator {
            outcomes: vec![
                ScoredOutcome { score: 0.9, true_positive: true, position_error: 0.2, yaw_error: 0.01 },
                ScoredOutcome { score: 0.8, true_positive: false, position_error: 0.0, yaw_error: 0.0 },
                ScoredOutcome { score: 0.7, true_positive: true, position_error: 0.4, yaw_error: 0.03 },
            ],
            ground_truth: 2,
        };
        let m = detection_metrics(&acc, 0.5).unwrap();
        assert_eq!(m.average_precision, 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
        assert_eq!((m.precision, m.recall), (2.0 / 3.0, 1.0));
        assert!((m.f_score - 0.8).abs() < 1e-15);
        assert!((m.position_error - 0.3).abs() < 1e-15);
        assert!((m.yaw_error_deg - 0.02f64.to_degrees()).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty() {
        let gt: Vec<Cuboid3D> = (1..5).map(|k| at(5.0 * k as f64, 0.0)).collect();
        let preds: Vec<ScoredCuboid> = gt.iter().map(|g| scored(g.clone(), 0.9)).collect();
        let c = MatchCriteria::default();
        let a = match_cuboids(&preds, &gt, &c);
        let m = detection_metrics(&DetectionAccumulator::from_assignment(&a, &preds, &gt), 0.5).unwrap();
        assert_eq!((m.average_precision, m.f_score, m.position_error, m.yaw_error_deg), (1.0, 1.0, 0.0, 0.0));
        let a = match_cuboids(&[], &gt, &c);
        let m = detection_metrics(&DetectionAccumulator::from_assignment(&a, &[], &gt), 0.5).unwrap();
        assert_eq!(m.average_precision, 0.0);
        assert_eq!(detection_metrics(&DetectionAccumulator::default(), 0.5), Err(MetricsError::NoGroundTruth));
    }

    fn map(d: &[Option<f64>], labels: &[&str]) -> RadialDistanceMap {
        RadialDistanceMap {
            bins: d.iter().zip(labels).map(|(d, l)| RdmBin { distance: *d, label: l.to_string() }).collect(),
            max_range: 50.0,
        }
    }

    #[test]
    fn rdm_gap_examples() {
        let gt = map(&[Some(10.0)], &["hazard"]);
        let m = rdm_metrics(&map(&[Some(10.5)], &["hazard"]), &gt, 20.0).unwrap();
        assert_eq!(m.rel_gap, Some(0.05));
        assert_eq!(m.success_rate, Some(1.0));
        let m = rdm_metrics(&map(&[Some(12.0)], &["hazard"]), &gt, 20.0).unwrap();
        assert_eq!(m.rel_gap, Some(0.2));
        assert_eq!(m.success_rate, Some(0.0));
        let m = rdm_metrics(&gt, &gt, 20.0).unwrap();
        assert_eq!((m.abs_gap, m.rel_gap, m.success_rate), (Some(0.0), Some(0.0), Some(1.0)));
        assert!(rdm_metrics(&gt, &RadialDistanceMap::unbounded(2), 20.0).is_err());
    }

    #[test]
    fn rdm_success_threshold_is_strict() {
        let gt = map(&[Some(10.0)], &["vehicle"]);
        let s = |p: f64| rdm_metrics(&map(&[Some(p)], &["vehicle"]), &gt, 20.0).unwrap().success_rate.unwrap();
        assert_eq!(s(10.99), 1.0);
        assert_eq!(s(11.0), 0.0);
        assert_eq!(s(11.01), 0.0);
    }

    proptest! {
        #[test]
        fn matching_conserves_counts(
            preds in prop::collection::vec((1.0f64..40.0, -0.1f64..0.1, 0.0f64..1.0), 0..12),
            gts in prop::collection::vec((1.0f64..40.0, -0.1f64..0.1), 0..12),
        ) {
            let p: Vec<ScoredCuboid> = preds.iter().map(|(r, y, s)| scored(at(*r, y.to_degrees()), *s)).collect();
            let g: Vec<Cuboid3D> = gts.iter().map(|(r, y)| at(*r, y.to_degrees())).collect();
            let a = match_cuboids(&p, &g, &MatchCriteria::default());
            prop_assert_eq!(a.matches.len() + a.false_negatives.len(), g.len());
            prop_assert_eq!(a.matches.len() + a.false_positives.len(), p.len());
        }

        #[test]
        fn ap_invariant_under_monotone_rescaling(flags in prop::collection::vec(any::<bool>(), 1..20), gt_extra in 0usize..5) {
            let n_tp = flags.iter().filter(|f| **f).count();
            let outcomes: Vec<ScoredOutcome> = flags.iter().enumerate().map(|(i, tp)| ScoredOutcome {
                score: 1.0 / (i as f64 + 2.0), true_positive: *tp, position_error: 0.0, yaw_error: 0.0,
            }).collect();
            let acc = DetectionAccumulator { outcomes: outcomes.clone(), ground_truth: n_tp + gt_extra + 1 };
            let rescaled = DetectionAccumulator {
                outcomes: outcomes.iter().map(|o| ScoredOutcome { score: (3.0 * o.score).exp(), ..*o }).collect(),
                ..acc.clone()
            };
            prop_assert_eq!(
                detection_metrics(&acc, 0.0).unwrap().average_precision,
                detection_metrics(&rescaled, 0.0).unwrap().average_precision
            );
        }
    }
}
