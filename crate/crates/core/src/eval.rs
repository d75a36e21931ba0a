//! Detection mAP over reprojected boxes and pose accuracy under translation
//! and rotation thresholds.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{swing_twist, Pose6D};
use crate::render::BBox2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub frame: usize,
    pub class: usize,
    pub bbox: BBox2D,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub frame: usize,
    pub class: usize,
    pub bbox: BBox2D,
}

/// Average precision of one class with all-point interpolation.
pub fn average_precision(predictions: &[LabeledBox], truth: &[GroundTruthBox], iou_threshold: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let mut by_frame: BTreeMap<usize, Vec<(usize, &GroundTruthBox)>> = BTreeMap::new();
    for (i, g) in truth.iter().enumerate() {
        by_frame.entry(g.frame).or_default().push((i, g));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].confidence.total_cmp(&predictions[a].confidence).then(a.cmp(&b)));
    let mut matched = vec![false; truth.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(order.len());
    for i in order {
        let p = &predictions[i];
        let best = by_frame
            .get(&p.frame)
            .into_iter()
            .flatten()
            .filter(|(gi, _)| !matched[*gi])
            .map(|(gi, g)| (*gi, p.bbox.iou(&g.bbox)))
            .filter(|(_, iou)| *iou >= iou_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((gi, _)) => {
                matched[gi] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / truth.len() as f64, tp as f64 / (tp + fp) as f64));
    }
    // Precision envelope from the right, then area under the step function.
    let mut env = vec![0.0; curve.len()];
    let mut best = 0.0f64;
    for k in (0..curve.len()).rev() {
        best = best.max(curve[k].1);
        env[k] = best;
    }
    let (mut ap, mut last_recall) = (0.0, 0.0);
    for (k, &(recall, _)) in curve.iter().enumerate() {
        if recall > last_recall {
            ap += (recall - last_recall) * env[k];
            last_recall = recall;
        }
    }
    ap
}

/// Mean over the classes present in the ground truth of the per-class AP.
pub fn map_score(predictions: &[LabeledBox], truth: &[GroundTruthBox], iou_threshold: f64) -> f64 {
    let classes: std::collections::BTreeSet<usize> = truth.iter().map(|g| g.class).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let p: Vec<LabeledBox> = predictions.iter().filter(|b| b.class == c).copied().collect();
            let g: Vec<GroundTruthBox> = truth.iter().filter(|b| b.class == c).copied().collect();
            average_precision(&p, &g, iou_threshold)
        })
        .sum();
    total / classes.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseAccuracySpec {
    pub dt: f64,
    pub dtheta: f64,
    /// Per-class symmetry axis in the object frame.
    pub symmetry: Vec<Option<Unit<Vector3<f64>>>>,
}

/// Rotation error (rad) ignoring rotation about `axis` when given.
pub fn symmetric_rotation_error(estimate: &Pose6D, truth: &Pose6D, axis: Option<&Unit<Vector3<f64>>>) -> f64 {
    let rel = truth.rotation.inverse() * estimate.rotation;
    match axis {
        Some(a) => {
            let (swing, _) = swing_twist(&rel, a);
            swing.angle()
        }
        None => rel.angle(),
    }
}

/// One ground-truth object and what a method reported for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCase {
    pub class: usize,
    pub truth: Pose6D,
    pub estimate: Option<(usize, Pose6D)>,
}

pub fn is_correct(case: &PoseCase, spec: &PoseAccuracySpec) -> bool {
    let Some((class, pose)) = case.estimate else { return false };
    if class != case.class {
        return false;
    }
    let axis = spec.symmetry.get(class).and_then(|a| a.as_ref());
    pose.translation_error(&case.truth) <= spec.dt && symmetric_rotation_error(&pose, &case.truth, axis) <= spec.dtheta
}

/// Fraction of cases localized within both thresholds.
pub fn pose_accuracy(cases: &[PoseCase], spec: &PoseAccuracySpec) -> f64 {
    if cases.is_empty() {
        return 0.0;
    }
    cases.iter().filter(|c| is_correct(c, spec)).count() as f64 / cases.len() as f64
}

pub const DEFAULT_DT_GRID: [f64; 3] = [0.02, 0.05, 0.10];
pub const DEFAULT_DTHETA_GRID_DEG: [f64; 3] = [10.0, 20.0, 30.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    pub dt: f64,
    pub dtheta_deg: f64,
    pub accuracy: f64,
}

/// Accuracy of every method at every threshold pair.
pub fn benchmark_report(
    runs: &[(String, Vec<PoseCase>)],
    symmetry: &[Option<Unit<Vector3<f64>>>],
    dt_grid: &[f64],
    dtheta_grid_deg: &[f64],
) -> Vec<AccuracyRow> {
    let mut rows = Vec::new();
    for (method, cases) in runs {
        for &dt in dt_grid {
            for &deg in dtheta_grid_deg {
                let spec = PoseAccuracySpec { dt, dtheta: deg.to_radians(), symmetry: symmetry.to_vec() };
                rows.push(AccuracyRow { method: method.clone(), dt, dtheta_deg: deg, accuracy: pose_accuracy(cases, &spec) });
            }
        }
    }
    rows
}

pub fn write_csv<W: Write, T: Serialize>(rows: &[T], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Maps each ground-truth object to the earliest track started by one of its
/// detections.
pub fn assign_tracks(track_sources: &[(u64, Option<u64>)]) -> BTreeMap<u64, u64> {
    let mut out = BTreeMap::new();
    for &(track, source) in track_sources {
        if let Some(obj) = source {
            out.entry(obj).and_modify(|t: &mut u64| *t = (*t).min(track)).or_insert(track);
        }
    }
    out
}
