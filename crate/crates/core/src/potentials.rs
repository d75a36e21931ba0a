//! The CRF factors: prediction, measurement and context potentials, the
//! stay/move action prior, and the learned instance-level relations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, CameraModel, Pose6D, SupportRegion, TriMesh, Vec3};
use crate::render::{self, BBox2D, DepthImage, SimilarityConfig};
use crate::simworld::Detection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("{0}")]
    Invalid(String),
}

/// All constants of the potentials. Defaults follow the reference setup:
/// `w1 = w2 = 0.5` and `r1 = r2 = 0.5`; the remaining values are tuning
/// choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialParams {
    /// Diagonal of the pose-drift covariance: `[x, y, z]` in m², then
    /// rotation-vector components in rad².
    pub sigma: [f64; 6],
    pub r1: f64,
    pub r2: f64,
    /// Per-class decay time (s), indexed by class; classes beyond the list
    /// fall back to `default_mu`.
    pub mu: Vec<f64>,
    pub default_mu: f64,
    /// How long (s) an object must be unobserved before move actions apply.
    pub t_sig: f64,
    /// Measurement potential for out-of-view hypotheses.
    pub delta: f64,
    /// Depth-similarity scale (1/m²).
    pub lambda: f64,
    pub w1: f64,
    pub w2: f64,
    pub neighbor_radius: f64,
    pub similarity: SimilarityConfig,
    /// When false the context product is forced to 1 (temporal-only ablation).
    pub use_context: bool,
    /// Translation spread (m, RMS per axis) below which a track counts as
    /// converged for instance-model updates.
    pub convergence_std: f64,
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self {
            sigma: [0.02f64.powi(2), 0.02f64.powi(2), 0.02f64.powi(2), 0.05f64.powi(2), 0.05f64.powi(2), 0.05f64.powi(2)],
            r1: 0.5,
            r2: 0.5,
            mu: Vec::new(),
            default_mu: 30.0,
            t_sig: 2.0,
            delta: 0.1,
            lambda: 10.0,
            w1: 0.5,
            w2: 0.5,
            neighbor_radius: 1.5,
            similarity: SimilarityConfig::default(),
            use_context: true,
            convergence_std: 0.02,
        }
    }
}

impl PotentialParams {
    pub fn mu_for(&self, class: usize) -> f64 {
        self.mu.get(class).copied().unwrap_or(self.default_mu)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let bad = |m: &str| Err(ParamError::Invalid(m.to_string()));
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return bad("sigma diagonal must be positive");
        }
        if !(self.r1 >= 0.0 && self.r2 >= 0.0 && self.r1 + self.r2 <= 1.0 + 1e-12) {
            return bad("need r1, r2 >= 0 and r1 + r2 <= 1");
        }
        if !((self.w1 + self.w2 - 1.0).abs() < 1e-9 && self.w1 >= 0.0 && self.w2 >= 0.0) {
            return bad("w1 + w2 must equal 1");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if self.mu.iter().chain(std::iter::once(&self.default_mu)).any(|&m| !(m > 0.0)) {
            return bad("decay times must be positive");
        }
        for (name, v) in [
            ("t_sig", self.t_sig),
            ("lambda", self.lambda),
            ("neighbor_radius", self.neighbor_radius),
            ("convergence_std", self.convergence_std),
        ] {
            if !(v > 0.0) {
                return Err(ParamError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Small-motion prediction potential `exp(-eᵀ Σ⁻¹ e)`, `e` being the relative
/// pose of `pose_t` in the frame of `pose_prev` as `[translation; rotvec]`.
pub fn phi_p_continuous(pose_t: &Pose6D, pose_prev: &Pose6D, sigma: &[f64; 6]) -> f64 {
    let e = pose_t.relative_error(pose_prev);
    let q: f64 = e.iter().zip(sigma).map(|(ek, sk)| ek * ek / sk).sum();
    (-q).exp()
}

/// Probability that an object unobserved for `dt` seconds has stayed put.
pub fn p_stay(dt: f64, mu: f64, r1: f64, r2: f64) -> f64 {
    r1 + r2 * (-dt.max(0.0) / mu).exp()
}

pub fn p_move(dt: f64, mu: f64, r1: f64, r2: f64) -> f64 {
    1.0 - p_stay(dt, mu, r1, r2)
}

/// Probability of a move during `(dt_prev, dt]` given no move by `dt_prev`.
/// Chaining these per-step draws reproduces `p_stay(dt) / p_stay(dt_prev)`
/// as the probability of never having moved.
pub fn move_hazard(dt_prev: f64, dt: f64, mu: f64, r1: f64, r2: f64) -> f64 {
    let before = p_stay(dt_prev, mu, r1, r2);
    if before <= 0.0 {
        return 1.0;
    }
    (1.0 - p_stay(dt, mu, r1, r2) / before).clamp(0.0, 1.0)
}

/// Intersection over the smaller box's area.
pub fn iom(a: &BBox2D, b: &BBox2D) -> f64 {
    let min_area = a.area().min(b.area());
    if min_area <= 0.0 {
        return 0.0;
    }
    (a.intersection_area(b) / min_area).clamp(0.0, 1.0)
}

/// Which branch of the measurement potential fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementBranch {
    OutOfView,
    Detections,
    DepthOnly,
}

/// Everything the measurement potential reads from the current frame.
pub struct MeasurementContext<'a> {
    pub camera: &'a CameraModel,
    pub camera_pose: &'a Pose6D,
    pub depth: &'a DepthImage,
    pub detections: &'a [Detection],
    /// Rendering of the other believed objects; hypothesis pixels behind
    /// them are left out of the depth comparison.
    pub surroundings: Option<render::Surroundings<'a>>,
    /// Detection assigned to the track this frame; the depth window is
    /// widened to cover it.
    pub assigned: Option<BBox2D>,
}

/// Measurement potential of a class-`class` hypothesis with geometry `mesh`
/// at `pose`.
pub fn phi_m(
    class: usize,
    mesh: &TriMesh,
    pose: &Pose6D,
    ctx: &MeasurementContext<'_>,
    params: &PotentialParams,
) -> (f64, MeasurementBranch) {
    let (l, branch) = log_phi_m(class, mesh, pose, ctx, params);
    (l.exp(), branch)
}

/// Natural log of [`phi_m`], computed without forming `exp(-lambda d)`.
pub fn log_phi_m(
    class: usize,
    mesh: &TriMesh,
    pose: &Pose6D,
    ctx: &MeasurementContext<'_>,
    params: &PotentialParams,
) -> (f64, MeasurementBranch) {
    if !render::in_frustum(mesh, pose, ctx.camera, ctx.camera_pose) {
        return (params.delta.ln(), MeasurementBranch::OutOfView);
    }
    let Some(bbox) = render::project_bbox(mesh, pose, ctx.camera, ctx.camera_pose) else {
        return (params.delta.ln(), MeasurementBranch::OutOfView);
    };
    if bbox.width().min(bbox.height()) < params.similarity.min_extent_px {
        return (params.delta.ln(), MeasurementBranch::OutOfView);
    }
    let d = match &ctx.surroundings {
        Some(s) => {
            let roi = match &ctx.assigned {
                Some(a) => {
                    let h = bbox.hull(a);
                    BBox2D::clipped(h.x_min, h.y_min, h.x_max, h.y_max, ctx.camera.width, ctx.camera.height)
                }
                None => bbox,
            };
            render::depth_discrepancy_in_scene((mesh, pose), ctx.camera, ctx.camera_pose, ctx.depth, s, &roi, &params.similarity)
        }
        None => render::depth_discrepancy((mesh, pose), ctx.camera, ctx.camera_pose, ctx.depth, &bbox, &params.similarity),
    };
    let log_f = -params.lambda * d;
    let mut overlapping = false;
    let mut score = 0.0;
    for det in ctx.detections {
        let l = iom(&det.bbox, &bbox);
        if l > 0.0 {
            overlapping = true;
            score += det.scores.get(class).copied().unwrap_or(0.0) * l;
        }
    }
    if overlapping {
        (score.ln() + log_f, MeasurementBranch::Detections)
    } else {
        (log_f, MeasurementBranch::DepthOnly)
    }
}

/// An object hypothesis or map estimate placed in the world, with its posed
/// bounding box precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedObject {
    pub class: usize,
    pub pose: Pose6D,
    pub aabb: Aabb,
}

impl PlacedObject {
    pub fn new(class: usize, pose: Pose6D, mesh: &TriMesh) -> Self {
        Self { class, pose, aabb: mesh.posed_aabb(&pose) }
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    pub fn support(&self) -> SupportRegion {
        crate::geometry::aabb_support(&self.aabb)
    }
}

/// Preferred center distance between two classes and how strongly it is
/// enforced. Unordered: `(a, b)` also covers `(b, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrence {
    pub a: usize,
    pub b: usize,
    pub preferred_distance: f64,
    pub strength: f64,
}

/// Hand-designed category-level relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CategoryContextModel {
    pub cooccurrence: Vec<CoOccurrence>,
    pub penetration_weight: f64,
    pub floating_weight: f64,
    /// A gap below this (m) still counts as resting on the support.
    pub support_tolerance: f64,
}

impl Default for CategoryContextModel {
    fn default() -> Self {
        Self { cooccurrence: Vec::new(), penetration_weight: 100.0, floating_weight: 10.0, support_tolerance: 0.01 }
    }
}

impl CategoryContextModel {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.penetration_weight < 0.0 || self.floating_weight < 0.0 || self.cooccurrence.iter().any(|c| c.strength < 0.0) {
            return Err(ParamError::Invalid("category weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn relation(&self, a: usize, b: usize) -> Option<&CoOccurrence> {
        self.cooccurrence.iter().find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
    }

    /// Gap (m) between the bottom of `obj` and the highest support surface
    /// beneath its center; 0 when resting within tolerance or when nothing
    /// lies below.
    pub fn clearance(&self, obj: &PlacedObject, supports: &[SupportRegion]) -> f64 {
        let bottom = obj.aabb.min.z;
        let c = obj.aabb.center();
        let below = supports
            .iter()
            .chain(std::iter::once(&SupportRegion::floor()))
            .filter(|s| s.contains_xy(c.x, c.y) && s.z <= bottom + self.support_tolerance)
            .map(|s| s.z)
            .fold(f64::NEG_INFINITY, f64::max);
        if !below.is_finite() {
            return 0.0;
        }
        let gap = bottom - below;
        if gap <= self.support_tolerance {
            0.0
        } else {
            gap
        }
    }
}

/// Category-level potential of `oi` against neighbor `oj`:
/// `exp(-[w_pen·pen² + w_float·clearance² + w_cooc·(dist − preferred)²])`.
/// `supports` are the surfaces `oi` may rest on besides the floor.
pub fn phi_cat(oi: &PlacedObject, oj: &PlacedObject, model: &CategoryContextModel, supports: &[SupportRegion]) -> f64 {
    let mut energy = 0.0;
    if model.penetration_weight > 0.0 {
        let pen = oi.aabb.penetration_depth(&oj.aabb);
        energy += model.penetration_weight * pen * pen;
    }
    if model.floating_weight > 0.0 {
        let gap = model.clearance(oi, supports);
        energy += model.floating_weight * gap * gap;
    }
    if let Some(rel) = model.relation(oi.class, oj.class) {
        if rel.strength > 0.0 {
            let dist = (oi.center() - oj.center()).norm();
            energy += rel.strength * (dist - rel.preferred_distance).powi(2);
        }
    }
    (-energy).exp()
}

/// Running Gaussian statistics of one ordered pair's displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub mean: [f64; 3],
    /// Sum of squared deviations (Welford accumulator).
    pub m2: [f64; 3],
    pub count: u64,
}

impl PairStats {
    pub fn variance(&self, floor: f64) -> [f64; 3] {
        let n = self.count.max(1) as f64;
        self.m2.map(|m| (m / n).max(floor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairEntry {
    from: u64,
    to: u64,
    #[serde(flatten)]
    stats: PairStats,
}

/// Learned instance-level relations keyed by ordered object-id pairs.
/// Displacement is `center(to) − center(from)`; orientation is not modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "InstanceRepr", into = "InstanceRepr")]
pub struct InstanceContextModel {
    pairs: BTreeMap<(u64, u64), PairStats>,
    pub variance_floor: f64,
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    variance_floor: f64,
    pairs: Vec<PairEntry>,
}

impl From<InstanceRepr> for InstanceContextModel {
    fn from(r: InstanceRepr) -> Self {
        Self {
            pairs: r.pairs.into_iter().map(|e| ((e.from, e.to), e.stats)).collect(),
            variance_floor: r.variance_floor,
        }
    }
}

impl From<InstanceContextModel> for InstanceRepr {
    fn from(m: InstanceContextModel) -> Self {
        Self {
            variance_floor: m.variance_floor,
            pairs: m.pairs.into_iter().map(|((from, to), stats)| PairEntry { from, to, stats }).collect(),
        }
    }
}

impl Default for InstanceContextModel {
    fn default() -> Self {
        Self { pairs: BTreeMap::new(), variance_floor: 1e-4 }
    }
}

impl InstanceContextModel {
    pub fn stats(&self, from: u64, to: u64) -> Option<&PairStats> {
        self.pairs.get(&(from, to))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Gaussian kernel on the displacement from `from_center` to `to_center`,
    /// or `None` when the pair has never been observed.
    pub fn phi_ins(&self, from: u64, from_center: &Vec3, to: u64, to_center: &Vec3) -> Option<f64> {
        let stats = self.pairs.get(&(from, to))?;
        let var = stats.variance(self.variance_floor);
        let d = to_center - from_center;
        let q: f64 = (0..3).map(|k| (d[k] - stats.mean[k]).powi(2) / var[k]).sum();
        Some((-0.5 * q).exp())
    }

    /// Folds one displacement observation into the pair's running statistics.
    pub fn update(&mut self, from: u64, from_center: &Vec3, to: u64, to_center: &Vec3) {
        let d = to_center - from_center;
        let entry = self.pairs.entry((from, to)).or_insert(PairStats { mean: [0.0; 3], m2: [0.0; 3], count: 0 });
        entry.count += 1;
        let n = entry.count as f64;
        for k in 0..3 {
            let delta = d[k] - entry.mean[k];
            entry.mean[k] += delta / n;
            entry.m2[k] += delta * (d[k] - entry.mean[k]);
        }
    }
}

/// Context potential `w1·φ_cat + w2·φ_ins`; an unseen pair contributes all of
/// its mass through the category term.
pub fn phi_c(phi_cat: f64, phi_ins: Option<f64>, w1: f64, w2: f64) -> f64 {
    match phi_ins {
        Some(ins) => w1 * phi_cat + w2 * ins,
        None => (w1 + w2) * phi_cat,
    }
}
