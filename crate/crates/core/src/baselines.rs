//! Comparison methods: point-to-point ICP, the temporal-only filter switch
//! and the raw detector.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::LabeledBox;
use crate::geometry::{Pose6D, Vec3};
use crate::potentials::PotentialParams;
use crate::simworld::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the residual improves by less than this (m).
    pub convergence_epsilon: f64,
    pub max_correspondence_dist: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iterations: 50_000, convergence_epsilon: 1e-6, max_correspondence_dist: 0.1 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcpError {
    #[error("need at least 3 points in each cloud (model {model}, observed {observed})")]
    TooFewPoints { model: usize, observed: usize },
    #[error("max_iterations must be at least 1")]
    BadConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub pose: Pose6D,
    /// RMS of correspondence distances truncated at the gating distance (m).
    pub residual: f64,
    pub iterations: usize,
    /// Set when an iteration found fewer than 3 correspondences; `pose` is
    /// the last estimate.
    pub failed: bool,
    pub residual_history: Vec<f64>,
}

/// Rigid transform minimizing `Σ |R·src + t − dst|²` (Kabsch).
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Pose6D {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Pose6D::new(cd - rotation * cs, rotation)
}

/// Point-to-point ICP registering `model` (object frame) onto `observed`
/// (world frame), starting from `initial`.
pub fn icp_register(model: &[Vec3], observed: &[Vec3], initial: Pose6D, config: &IcpConfig) -> Result<IcpResult, IcpError> {
    if model.len() < 3 || observed.len() < 3 {
        return Err(IcpError::TooFewPoints { model: model.len(), observed: observed.len() });
    }
    if config.max_iterations == 0 {
        return Err(IcpError::BadConfig);
    }
    let cloud: Vec<[f64; 3]> = observed.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&cloud);
    let gate2 = config.max_correspondence_dist.powi(2);

    let mut pose = initial;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut failed = false;
    let mut prev = f64::INFINITY;
    while iterations < config.max_iterations {
        iterations += 1;
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        let mut cost = 0.0;
        for p in model {
            let q = pose.transform_point(p);
            let nn = tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
            if nn.distance <= gate2 {
                src.push(q);
                dst.push(observed[nn.item as usize]);
                cost += nn.distance;
            } else {
                cost += gate2;
            }
        }
        let residual = (cost / model.len() as f64).sqrt();
        history.push(residual);
        if src.len() < 3 {
            failed = true;
            break;
        }
        if prev - residual < config.convergence_epsilon || residual < 1e-12 {
            break;
        }
        prev = residual;
        pose = kabsch(&src, &dst).compose(&pose);
    }
    let residual = *history.last().expect("at least one iteration");
    Ok(IcpResult { pose, residual, iterations, failed, residual_history: history })
}

/// The temporal-only configuration: context product fixed to 1.
pub fn tmap_config(params: &PotentialParams) -> PotentialParams {
    PotentialParams { use_context: false, ..params.clone() }
}

/// Detections passed straight through with their argmax label and score.
pub fn raw_detector_eval(stream: &[(usize, Vec<Detection>)]) -> Vec<LabeledBox> {
    stream
        .iter()
        .flat_map(|(frame, dets)| {
            dets.iter().map(move |d| LabeledBox { frame: *frame, class: d.label(), bbox: d.bbox, confidence: d.confidence() })
        })
        .collect()
}
