use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::labels::{
    detection_metrics, detection_table, match_cuboids, rdm_accumulate, rdm_table, DetectionAccumulator,
    DetectionMetrics, LabelSet, MatchCriteria, RdmAccumulator, RdmMetrics, ScoredCuboid,
};

use super::manifest::{list_scenes, read_manifest};
use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Obstacle,
    Freespace,
}

impl FromStr for EvalTask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "obstacle" => Ok(EvalTask::Obstacle),
            "freespace" => Ok(EvalTask::Freespace),
            _ => Err(format!("unknown task {s}; expected obstacle or freespace")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub criteria: MatchCriteria,
    /// Precision, recall and F-score use predictions scoring at least this.
    pub score_threshold: f64,
    /// Freespace bins farther than this in the ground truth are ignored.
    pub radius_limit: f64,
}

/// Freespace is scored within this distance of the ego origin by default.
pub const DEFAULT_FREESPACE_RADIUS: f64 = 10.0;

impl Default for EvalOptions {
    fn default() -> Self {
        Self { criteria: MatchCriteria::default(), score_threshold: 0.5, radius_limit: DEFAULT_FREESPACE_RADIUS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class: String,
    pub ground_truth: usize,
    pub predictions: usize,
    /// `None` when the class has no ground truth.
    pub metrics: Option<DetectionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum EvalResult {
    Obstacle { classes: Vec<ClassResult>, overall: Option<DetectionMetrics> },
    Freespace { radius_limit: f64, metrics: RdmMetrics },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenes: usize,
    /// Ground-truth scenes with no prediction; scored as empty predictions.
    pub missing_predictions: Vec<String>,
    /// Prediction scenes with no ground truth; ignored.
    pub unmatched_predictions: Vec<String>,
    pub result: EvalResult,
}

impl EvaluationReport {
    pub fn table(&self) -> String {
        match &self.result {
            EvalResult::Obstacle { classes, overall } => {
                let mut rows: Vec<(String, DetectionMetrics)> =
                    classes.iter().filter_map(|c| c.metrics.map(|m| (c.class.clone(), m))).collect();
                if let Some(m) = overall {
                    rows.push(("all".into(), *m));
                }
                detection_table(&rows)
            }
            EvalResult::Freespace { metrics, .. } => rdm_table(metrics),
        }
    }
}

fn read_labels(dir: &Path) -> Result<BTreeMap<String, LabelSet>, PipelineError> {
    let mut out = BTreeMap::new();
    for entry in list_scenes(dir)? {
        let (_, parsed) = read_manifest(&entry)?;
        let m = parsed.map_err(|e| PipelineError::Manifest { path: entry.manifest_path(), message: e })?;
        if out.insert(m.scene_id.clone(), m.labels).is_some() {
            return Err(PipelineError::Manifest { path: entry.manifest_path(), message: "duplicate scene id".into() });
        }
    }
    Ok(out)
}

fn scored(labels: &LabelSet) -> Vec<ScoredCuboid> {
    labels
        .cuboids
        .iter()
        .enumerate()
        .map(|(i, c)| ScoredCuboid { cuboid: c.clone(), score: labels.scores.get(i).copied().unwrap_or(1.0) })
        .collect()
}

/// Score the labels of the datasets under `pred` against those under `gt`,
/// pairing scenes by id.
pub fn evaluate(pred: &Path, gt: &Path, task: EvalTask, options: &EvalOptions) -> Result<EvaluationReport, PipelineError> {
    let preds = read_labels(pred)?;
    let gts = read_labels(gt)?;
    let empty = LabelSet::new(1);
    let missing: Vec<String> = gts.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    let unmatched: Vec<String> = preds.keys().filter(|k| !gts.contains_key(*k)).cloned().collect();

    let result = match task {
        EvalTask::Obstacle => {
            let mut classes: BTreeSet<String> = BTreeSet::new();
            for l in gts.values().chain(preds.values()) {
                classes.extend(l.cuboids.iter().map(|c| c.class_label.clone()));
            }
            let mut per_class: BTreeMap<String, (DetectionAccumulator, usize)> = BTreeMap::new();
            for (id, g) in &gts {
                let p = preds.get(id).unwrap_or(&empty);
                let all_p = scored(p);
                for class in &classes {
                    let ps: Vec<ScoredCuboid> = all_p.iter().filter(|s| &s.cuboid.class_label == class).cloned().collect();
                    let gs: Vec<_> = g.cuboids.iter().filter(|c| &c.class_label == class).cloned().collect();
                    let a = match_cuboids(&ps, &gs, &options.criteria);
                    let acc = DetectionAccumulator::from_assignment(&a, &ps, &gs);
                    let e = per_class.entry(class.clone()).or_insert_with(|| (DetectionAccumulator::default(), 0));
                    e.0 = std::mem::take(&mut e.0).merge(acc);
                    e.1 += ps.len();
                }
            }
            let mut all = DetectionAccumulator::default();
            let mut rows = Vec::new();
            for (class, (acc, predictions)) in per_class {
                rows.push(ClassResult {
                    class,
                    ground_truth: acc.ground_truth,
                    predictions,
                    metrics: detection_metrics(&acc, options.score_threshold).ok(),
                });
                all = all.merge(acc);
            }
            EvalResult::Obstacle { classes: rows, overall: detection_metrics(&all, options.score_threshold).ok() }
        }
        EvalTask::Freespace => {
            let mut acc = RdmAccumulator::default();
            for (id, g) in &gts {
                let Some(p) = preds.get(id) else {
                    let unbounded = crate::labels::RadialDistanceMap::unbounded(g.freespace.len());
                    acc = acc.merge(rdm_accumulate(&unbounded, &g.freespace, options.radius_limit).map_err(eval_err)?);
                    continue;
                };
                acc = acc.merge(rdm_accumulate(&p.freespace, &g.freespace, options.radius_limit).map_err(eval_err)?);
            }
            EvalResult::Freespace { radius_limit: options.radius_limit, metrics: acc.finish() }
        }
    };
    Ok(EvaluationReport { scenes: gts.len(), missing_predictions: missing, unmatched_predictions: unmatched, result })
}

fn eval_err(e: crate::labels::MetricsError) -> PipelineError {
    PipelineError::Evaluation(e.to_string())
}
