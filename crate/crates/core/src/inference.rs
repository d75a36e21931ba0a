//! Track management and the per-frame particle filter over object classes
//! and poses.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{random_rotation, support_region, swing_twist, CameraModel, Pose6D, SupportRegion, TriMesh, Vec3};
use crate::potentials::{
    move_hazard, phi_c, phi_cat, log_phi_m, CategoryContextModel, MeasurementBranch, InstanceContextModel, MeasurementContext, PlacedObject,
    PotentialParams,
};
use crate::render::{self, BBox2D, DepthImage};
use crate::simworld::{argmax, sample_categorical, Detection, Observation, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Particles per track.
    pub particles: usize,
    /// Consecutive associations needed to initiate a track.
    pub k_assoc: usize,
    pub iou_threshold: f64,
    /// Std (m) of the jitter added to back-projected initial centers.
    pub init_jitter: f64,
    /// Fraction of the box area, around its center, searched for initial depth.
    pub center_fraction: f64,
    /// Unmatched detections overlapping an active track's predicted box by at
    /// least this IoU do not spawn new tracks.
    pub spawn_suppress_iou: f64,
    pub init_orientation: InitOrientation,
    /// Tracks are not initiated from detections within this many pixels of
    /// the image border.
    pub border_margin_px: f64,
}

/// How initial particle orientations are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitOrientation {
    /// Uniform over SO(3).
    #[default]
    Uniform,
    /// Upright, uniform yaw about world z.
    UprightYaw,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { particles: 200, k_assoc: 3, iou_threshold: 0.5, init_jitter: 0.02, center_fraction: 0.25, spawn_suppress_iou: 0.1, init_orientation: InitOrientation::Uniform, border_margin_px: 0.0 }
    }
}

/// Everything the filter knows about the world besides observations: class
/// geometry, camera intrinsics and the potentials.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    pub meshes: Vec<Arc<TriMesh>>,
    pub camera: CameraModel,
    pub params: PotentialParams,
    pub category: CategoryContextModel,
    pub config: FilterConfig,
    /// Known static structure (floor, walls).
    pub environment: Vec<(Arc<TriMesh>, Pose6D)>,
}

impl InferenceModel {
    pub fn from_scenario(scenario: &Scenario, config: FilterConfig) -> Self {
        Self {
            meshes: scenario.classes.iter().map(|c| c.mesh.clone()).collect(),
            camera: scenario.camera,
            params: scenario.params.clone(),
            category: scenario.category.clone(),
            config,
            environment: scenario.environment.clone(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.meshes.len()
    }

    pub fn place(&self, h: &ObjectHypothesis) -> PlacedObject {
        PlacedObject::new(h.class, h.pose, &self.meshes[h.class])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectHypothesis {
    pub class: usize,
    pub pose: Pose6D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<ObjectHypothesis>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    pub fn uniform(particles: Vec<ObjectHypothesis>) -> Self {
        let m = particles.len();
        Self { particles, weights: vec![1.0 / m as f64; m] }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Sets weights from unnormalized log-weights. Returns `false` (and
    /// leaves the weights uniform) when every weight is zero or undefined.
    pub fn set_log_weights(&mut self, log_w: &[f64]) -> bool {
        let max = log_w.iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
        let m = self.len();
        if !max.is_finite() {
            self.weights = vec![1.0 / m as f64; m];
            return false;
        }
        let raw: Vec<f64> = log_w.iter().map(|&l| if l.is_nan() { 0.0 } else { (l - max).exp() }).collect();
        let total: f64 = raw.iter().sum();
        self.weights = raw.into_iter().map(|w| w / total).collect();
        true
    }

    /// Systematic (low-variance) resampling; output weights are uniform.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let m = self.len();
        if m == 0 {
            return;
        }
        let step = 1.0 / m as f64;
        let mut u = rng.random::<f64>() * step;
        let mut cum = self.weights[0];
        let mut i = 0;
        let mut out = Vec::with_capacity(m);
        for _ in 0..m {
            while u > cum && i + 1 < m {
                i += 1;
                cum += self.weights[i];
            }
            out.push(self.particles[i]);
            u += step;
        }
        *self = Self::uniform(out);
    }

    /// Weight mass per class.
    pub fn class_mass(&self, num_classes: usize) -> Vec<f64> {
        let mut mass = vec![0.0; num_classes];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            if p.class < num_classes {
                mass[p.class] += w;
            }
        }
        mass
    }

    /// Weighted RMS per-axis spread (m) of particle translations of `class`.
    pub fn translation_spread(&self, class: usize) -> f64 {
        let (mut total, mut mean) = (0.0, Vec3::zeros());
        for (p, w) in self.particles.iter().zip(&self.weights).filter(|(p, _)| p.class == class) {
            total += w;
            mean += p.pose.translation * *w;
        }
        if total <= 0.0 {
            return f64::INFINITY;
        }
        mean /= total;
        let var: f64 = self
            .particles
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| p.class == class)
            .map(|(p, w)| w * (p.pose.translation - mean).norm_squared())
            .sum::<f64>()
            / total;
        (var / 3.0).sqrt()
    }
}

/// Reported state of one tracked object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub id: u64,
    pub class: usize,
    pub pose: Pose6D,
    pub confidence: f64,
    pub last_seen: f64,
}

/// Majority class by weight mass, the highest-weight particle of that class,
/// and the class mass as confidence.
pub fn map_estimate(set: &ParticleSet, num_classes: usize) -> (usize, Pose6D, f64) {
    let mass = set.class_mass(num_classes);
    let class = crate::simworld::argmax(&mass);
    let of_class = || set.particles.iter().zip(&set.weights).filter(|(p, _)| p.class == class);
    let top = of_class().map(|(_, &w)| w).fold(f64::NEG_INFINITY, f64::max);
    let mut mean = Vec3::zeros();
    for (p, &w) in of_class() {
        mean += p.pose.translation * w;
    }
    mean /= mass[class].max(f64::MIN_POSITIVE);
    // Ties (e.g. uniform weights out of view) go to the particle nearest the
    // class mean.
    let best = of_class()
        .filter(|(_, &w)| w >= top * (1.0 - 1e-9))
        .min_by(|(a, _), (b, _)| (a.pose.translation - mean).norm().total_cmp(&(b.pose.translation - mean).norm()));
    (class, best.map(|(p, _)| p.pose).unwrap_or_else(Pose6D::identity), mass[class])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Pending,
    Active,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    /// Consecutive frames with an associated detection (pending tracks).
    pub hits: usize,
    pub last_seen: f64,
    pub last_bbox: BBox2D,
    /// `(frame, bbox)` of every associated detection.
    pub history: Vec<(usize, BBox2D)>,
    pub particles: Option<ParticleSet>,
    pub estimate: Option<MapEntry>,
    /// Ground-truth source of the detection that started the track; only
    /// evaluation reads it.
    pub source: Option<u64>,
}

impl Track {
    pub fn state(&self) -> TrackState {
        if self.particles.is_some() {
            TrackState::Active
        } else {
            TrackState::Pending
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Belief {
    pub tracks: BTreeMap<u64, Track>,
    pub next_id: u64,
    pub time: Option<f64>,
    pub frame: usize,
    pub instance: InstanceContextModel,
    pub degeneracy_events: usize,
}

impl Belief {
    pub fn with_instance_model(instance: InstanceContextModel) -> Self {
        Self { instance, ..Self::default() }
    }

    pub fn active(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values().filter(|t| t.state() == TrackState::Active)
    }

    pub fn map(&self) -> Vec<MapEntry> {
        self.active().filter_map(|t| t.estimate).collect()
    }

    pub fn snapshot(&self) -> BeliefSnapshot {
        BeliefSnapshot { frame: self.frame, time: self.time.unwrap_or(0.0), objects: self.map() }
    }
}

/// Per-frame export of the map estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub frame: usize,
    pub time: f64,
    pub objects: Vec<MapEntry>,
}

impl BeliefSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(detection index, track id)`.
    pub matches: Vec<(usize, u64)>,
    pub unmatched: Vec<usize>,
}

/// Greedy best-IoU matching; ties go to the larger IoU, then the lower
/// track id.
pub fn associate(detections: &[Detection], tracks: &[(u64, BBox2D)], iou_threshold: f64) -> Association {
    let ious: Vec<Vec<f64>> = detections.iter().map(|d| tracks.iter().map(|(_, bb)| d.bbox.iou(bb)).collect()).collect();
    let ids: Vec<u64> = tracks.iter().map(|t| t.0).collect();
    greedy_match(&ious, &ids, iou_threshold)
}

/// Greedy matching on a detection × track IoU matrix.
pub fn greedy_match(ious: &[Vec<f64>], track_ids: &[u64], iou_threshold: f64) -> Association {
    let mut pairs = Vec::new();
    for (d, row) in ious.iter().enumerate() {
        for (t, &iou) in row.iter().enumerate() {
            if iou >= iou_threshold && iou > 0.0 {
                pairs.push((iou, track_ids[t], d));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_det = vec![false; ious.len()];
    let mut used_track = std::collections::BTreeSet::new();
    let mut matches = Vec::new();
    for (_, id, d) in pairs {
        if !used_det[d] && !used_track.contains(&id) {
            used_det[d] = true;
            used_track.insert(id);
            matches.push((d, id));
        }
    }
    matches.sort();
    let unmatched = (0..ious.len()).filter(|&d| !used_det[d]).collect();
    Association { matches, unmatched }
}

/// Settings of [`init_particles`].
#[derive(Debug, Clone, Copy)]
pub struct InitParams<'a> {
    pub particles: usize,
    pub jitter: f64,
    pub center_fraction: f64,
    /// Per class: distance pushed along the viewing ray, from the visible
    /// surface towards the object's middle (none when empty).
    pub surface_offsets: &'a [f64],
    pub orientation: InitOrientation,
}

impl<'a> InitParams<'a> {
    pub fn from_config(config: &FilterConfig, surface_offsets: &'a [f64]) -> Self {
        Self {
            particles: config.particles,
            jitter: config.init_jitter,
            center_fraction: config.center_fraction,
            surface_offsets,
            orientation: config.init_orientation,
        }
    }
}

/// Particles for a new track: classes from the detection scores, centers at
/// back-projected depth from the central part of the box. `None` when that
/// region holds no valid depth.
pub fn init_particles<R: Rng + ?Sized>(
    detection: &Detection,
    depth: &DepthImage,
    camera: &CameraModel,
    camera_pose: &Pose6D,
    init: &InitParams<'_>,
    rng: &mut R,
) -> Option<ParticleSet> {
    let rect = detection.bbox.scaled(init.center_fraction.sqrt()).pixel_rect(camera.width, camera.height);
    let mut points = Vec::new();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            if let Some(z) = depth.get(x, y) {
                points.push(camera.back_project(x as f64 + 0.5, y as f64 + 0.5, z as f64));
            }
        }
    }
    if points.is_empty() {
        return None;
    }
    let noise = Normal::new(0.0, init.jitter.max(0.0)).expect("finite jitter");
    let particles = (0..init.particles)
        .map(|_| {
            let class = sample_categorical(&detection.scores, rng);
            let mut p = points[rng.random_range(0..points.len())];
            if let Some(&off) = init.surface_offsets.get(class) {
                p += p.normalize() * off;
            }
            let j = Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
            let center = camera_pose.transform_point(&p) + j;
            let rotation = match init.orientation {
                InitOrientation::Uniform => random_rotation(rng),
                InitOrientation::UprightYaw => UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(-PI..PI)),
            };
            ObjectHypothesis { class, pose: Pose6D::new(center, rotation) }
        })
        .collect();
    Some(ParticleSet::uniform(particles))
}

/// Inputs of the prediction step for one track.
pub struct PredictContext<'a> {
    pub params: &'a PotentialParams,
    pub meshes: &'a [Arc<TriMesh>],
    /// Seconds since last seen, now and at the previous frame.
    pub dt_unseen: f64,
    pub dt_unseen_prev: f64,
    /// Whether the track's current estimate lies in the camera frustum.
    pub in_view: bool,
    /// Support regions of the other active objects.
    pub supports: &'a [SupportRegion],
}

fn drift<R: Rng + ?Sized>(pose: &Pose6D, sigma: &[f64; 6], rng: &mut R) -> Pose6D {
    let mut e = [0.0; 6];
    for (k, s) in sigma.iter().enumerate() {
        e[k] = rng.sample::<f64, _>(rand_distr::StandardNormal) * s.sqrt();
    }
    let dq = UnitQuaternion::from_scaled_axis(Vector3::new(e[3], e[4], e[5]));
    Pose6D::new(pose.translation + Vector3::new(e[0], e[1], e[2]), dq * pose.rotation)
}

/// Places `h` on `region`: uniform position, bottom on the surface, uniform
/// yaw, tilt kept.
pub fn place_on_support<R: Rng + ?Sized>(h: &ObjectHypothesis, mesh: &TriMesh, region: &SupportRegion, rng: &mut R) -> Pose6D {
    let (tilt, _) = swing_twist(&h.pose.rotation, &Vector3::z_axis());
    let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let rotation = yaw * tilt;
    let local = mesh.posed_aabb(&Pose6D::new(Vec3::zeros(), rotation));
    let (x, y) = region.sample_xy(rng);
    let c = local.center();
    Pose6D::new(Vec3::new(x - c.x, y - c.y, region.z - local.min.z), rotation)
}

/// Propagates particles one step. Observed (or recently observed) objects
/// drift slightly; objects unseen past the significance time either stay
/// put or move onto another object's support surface.
pub fn predict<R: Rng + ?Sized>(set: &mut ParticleSet, ctx: &PredictContext<'_>, rng: &mut R) {
    let p = ctx.params;
    let unseen = !ctx.in_view && ctx.dt_unseen >= p.t_sig;
    for h in set.particles.iter_mut() {
        if !unseen {
            h.pose = drift(&h.pose, &p.sigma, rng);
            continue;
        }
        if ctx.supports.is_empty() {
            continue;
        }
        let prev = if ctx.dt_unseen_prev < p.t_sig { 0.0 } else { ctx.dt_unseen_prev };
        let hazard = move_hazard(prev, ctx.dt_unseen, p.mu_for(h.class), p.r1, p.r2);
        if rng.random::<f64>() < hazard {
            let region = &ctx.supports[rng.random_range(0..ctx.supports.len())];
            h.pose = place_on_support(h, &ctx.meshes[h.class], region, rng);
        }
    }
}

/// A neighboring object as seen by the context potential.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor {
    pub id: u64,
    pub placed: PlacedObject,
}

pub struct WeightContext<'a> {
    pub model: &'a InferenceModel,
    pub camera_pose: &'a Pose6D,
    pub depth: &'a DepthImage,
    pub detections: &'a [Detection],
    pub track_id: u64,
    /// Previous-step estimates of the other active tracks.
    pub neighbors: &'a [Neighbor],
    /// Surfaces the object may rest on besides the floor.
    pub supports: &'a [SupportRegion],
    pub instance: &'a InstanceContextModel,
    /// Rendering of the other tracks' estimates, for occlusion reasoning.
    pub surroundings: Option<render::Surroundings<'a>>,
    /// Box of the detection associated with this track, if any.
    pub assigned: Option<BBox2D>,
}

/// Log of the unnormalized weight of one hypothesis.
pub fn log_weight(h: &ObjectHypothesis, ctx: &WeightContext<'_>) -> f64 {
    let model = ctx.model;
    let params = &model.params;
    let mctx = MeasurementContext {
        camera: &model.camera,
        camera_pose: ctx.camera_pose,
        depth: ctx.depth,
        detections: ctx.detections,
        surroundings: ctx.surroundings,
        assigned: ctx.assigned,
    };
    let (mut lw, branch) = log_phi_m(h.class, &model.meshes[h.class], &h.pose, &mctx, params);
    // Out of view there is no new evidence; reapplying the context every
    // frame would compound the same prior.
    if params.use_context && branch != MeasurementBranch::OutOfView {
        let me = model.place(h);
        let center = me.center();
        for n in ctx.neighbors {
            let nc = n.placed.center();
            if (nc - center).norm() > params.neighbor_radius {
                continue;
            }
            let cat = phi_cat(&me, &n.placed, &model.category, ctx.supports);
            let ins = ctx.instance.phi_ins(ctx.track_id, &center, n.id, &nc);
            lw += phi_c(cat, ins, params.w1, params.w2).ln();
        }
    }
    lw
}

/// Reweights the set against the current observation. Returns `false` on a
/// degeneracy reset.
pub fn weight(set: &mut ParticleSet, ctx: &WeightContext<'_>) -> bool {
    let log_w: Vec<f64> = set.particles.par_iter().map(|h| log_weight(h, ctx)).collect();
    set.set_log_weights(&log_w)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub association: Association,
    pub initialized: Vec<u64>,
    pub degenerate: Vec<u64>,
}

/// Typical distance from a visible surface point to the middle of the object.
pub fn surface_offset(mesh: &TriMesh) -> f64 {
    let e = mesh.aabb().extents();
    (e.x + e.y) / 4.0
}

fn away_from_border(b: &BBox2D, camera: &CameraModel, margin: f64) -> bool {
    b.x_min >= margin && b.y_min >= margin && b.x_max <= camera.width as f64 - margin && b.y_max <= camera.height as f64 - margin
}

fn estimate_of(track: &Track, set: &ParticleSet, n: usize) -> MapEntry {
    let (class, pose, confidence) = map_estimate(set, n);
    MapEntry { id: track.id, class, pose, confidence, last_seen: track.last_seen }
}

/// One step of the filter: associate, manage pending tracks, then resample,
/// predict and weight every active track against the frozen previous-step
/// estimates, and finally update the instance model from converged tracks.
pub fn filter_step<R: Rng + ?Sized>(belief: &mut Belief, obs: &Observation, model: &InferenceModel, rng: &mut R) -> StepReport {
    let cfg = &model.config;
    let n_classes = model.num_classes();
    let now = obs.time;
    let prev_time = belief.time.unwrap_or(now);
    let mut report = StepReport::default();

    let prev: Vec<(u64, MapEntry, PlacedObject)> = belief
        .active()
        .filter_map(|t| t.estimate.map(|e| (t.id, e, PlacedObject::new(e.class, e.pose, &model.meshes[e.class]))))
        .collect();

    // Association: active tracks first, then pending ones on the leftovers.
    let predicted: Vec<(u64, BBox2D)> = prev
        .iter()
        .filter_map(|(id, e, _)| {
            let mesh = &model.meshes[e.class];
            if !render::in_frustum(mesh, &e.pose, &model.camera, &obs.robot_pose) {
                return None;
            }
            render::project_bbox(mesh, &e.pose, &model.camera, &obs.robot_pose).map(|b| (*id, b))
        })
        .collect();
    let first = associate(&obs.detections, &predicted, cfg.iou_threshold);
    let leftovers: Vec<Detection> = first.unmatched.iter().map(|&d| obs.detections[d].clone()).collect();
    let pending: Vec<(u64, BBox2D)> =
        belief.tracks.values().filter(|t| t.state() == TrackState::Pending).map(|t| (t.id, t.last_bbox)).collect();
    let second = associate(&leftovers, &pending, cfg.iou_threshold);

    let mut matched_active: BTreeMap<u64, usize> = BTreeMap::new();
    for &(d, id) in &first.matches {
        matched_active.insert(id, d);
    }
    let mut matched_pending: BTreeMap<u64, usize> = BTreeMap::new();
    for &(d, id) in &second.matches {
        matched_pending.insert(id, first.unmatched[d]);
    }
    let spawn: Vec<usize> = second
        .unmatched
        .iter()
        .map(|&d| first.unmatched[d])
        .filter(|&d| {
            let det = &obs.detections[d];
            let top = argmax(&det.scores);
            predicted.iter().all(|(id, bb)| {
                let class = prev.iter().find(|(p, _, _)| p == id).map(|(_, e, _)| e.class);
                class != Some(top) || det.bbox.iou(bb) < cfg.spawn_suppress_iou
            })
        })
        .collect();
    report.association = Association {
        matches: first.matches.iter().map(|&(d, id)| (d, id)).chain(matched_pending.iter().map(|(&id, &d)| (d, id))).collect(),
        unmatched: second.unmatched.iter().map(|&d| first.unmatched[d]).collect(),
    };

    // Per-track RNG streams, drawn in id order for thread-count independence.
    let seeds: BTreeMap<u64, u64> = belief.tracks.keys().map(|&id| (id, rng.random::<u64>())).collect();

    // Active tracks: resample, predict, weight.
    let neighbors_all: Vec<Neighbor> = prev.iter().map(|(id, _, placed)| Neighbor { id: *id, placed: *placed }).collect();
    let supports_all: Vec<(u64, SupportRegion)> =
        prev.iter().map(|(id, e, _)| (*id, support_region(&model.meshes[e.class], &e.pose))).collect();
    let instance = &belief.instance;
    let offsets: Vec<f64> = model.meshes.iter().map(|m| surface_offset(m)).collect();
    let init = InitParams::from_config(cfg, &offsets);
    let structure = {
        let items: Vec<render::SceneItem<'_>> = model.environment.iter().map(|(m, p)| (m.as_ref(), *p)).collect();
        render::render_depth(&items, &model.camera, &obs.robot_pose)
    };
    let others_for = |id: u64| -> DepthImage {
        let items: Vec<render::SceneItem<'_>> =
            prev.iter().filter(|(other, _, _)| *other != id).map(|(_, e, _)| (model.meshes[e.class].as_ref(), e.pose)).collect();
        render::render_depth(&items, &model.camera, &obs.robot_pose)
    };
    let updates: Vec<(u64, ParticleSet, bool)> = belief
        .tracks
        .values()
        .filter(|t| t.state() == TrackState::Active)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|t| {
            let mut set = t.particles.clone().expect("active track");
            let mut trng = ChaCha8Rng::seed_from_u64(seeds[&t.id]);
            set.resample(&mut trng);
            let supports: Vec<SupportRegion> = supports_all.iter().filter(|(id, _)| *id != t.id).map(|(_, s)| *s).collect();
            let in_view = t
                .estimate
                .map(|e| render::in_frustum(&model.meshes[e.class], &e.pose, &model.camera, &obs.robot_pose))
                .unwrap_or(true);
            let pctx = PredictContext {
                params: &model.params,
                meshes: &model.meshes,
                dt_unseen: now - t.last_seen,
                dt_unseen_prev: prev_time - t.last_seen,
                in_view,
                supports: &supports,
            };
            predict(&mut set, &pctx, &mut trng);
            let neighbors: Vec<Neighbor> = neighbors_all.iter().filter(|n| n.id != t.id).copied().collect();
            let others = others_for(t.id);
            let wctx = WeightContext {
                model,
                camera_pose: &obs.robot_pose,
                depth: &obs.depth,
                detections: &obs.detections,
                track_id: t.id,
                neighbors: &neighbors,
                supports: &supports,
                instance,
                surroundings: Some(render::Surroundings { objects: &others, structure: &structure }),
                assigned: matched_active.get(&t.id).map(|&d| obs.detections[d].bbox),
            };
            let ok = weight(&mut set, &wctx);
            (t.id, set, ok)
        })
        .collect();
    for (id, set, ok) in updates {
        if !ok {
            log::debug!("frame {}: track {id} degenerate, weights reset", obs.frame);
            report.degenerate.push(id);
        }
        let track = belief.tracks.get_mut(&id).expect("track exists");
        if let Some(&d) = matched_active.get(&id) {
            track.last_seen = now;
            track.last_bbox = obs.detections[d].bbox;
            track.history.push((obs.frame, obs.detections[d].bbox));
        }
        track.estimate = Some(estimate_of(track, &set, n_classes));
        track.particles = Some(set);
    }

    // Pending tracks: advance matched ones, drop the rest, initialize ripe ones.
    let pending_ids: Vec<u64> = belief.tracks.values().filter(|t| t.state() == TrackState::Pending).map(|t| t.id).collect();
    for id in pending_ids {
        let Some(&d) = matched_pending.get(&id) else {
            belief.tracks.remove(&id);
            continue;
        };
        let det = &obs.detections[d];
        let track = belief.tracks.get_mut(&id).expect("pending exists");
        track.hits += 1;
        track.last_bbox = det.bbox;
        track.last_seen = now;
        track.history.push((obs.frame, det.bbox));
        if track.hits >= cfg.k_assoc && away_from_border(&det.bbox, &model.camera, cfg.border_margin_px) {
            let mut trng = ChaCha8Rng::seed_from_u64(seeds[&id]);
            if let Some(mut set) = init_particles(det, &obs.depth, &model.camera, &obs.robot_pose, &init, &mut trng) {
                let neighbors: Vec<Neighbor> = neighbors_all.iter().filter(|n| n.id != id).copied().collect();
                let supports: Vec<SupportRegion> = supports_all.iter().map(|(_, s)| *s).collect();
                let others = others_for(id);
                let wctx = WeightContext {
                    model,
                    camera_pose: &obs.robot_pose,
                    depth: &obs.depth,
                    detections: &obs.detections,
                    track_id: id,
                    neighbors: &neighbors,
                    supports: &supports,
                    instance: &belief.instance,
                    surroundings: Some(render::Surroundings { objects: &others, structure: &structure }),
                    assigned: Some(det.bbox),
                };
                if !weight(&mut set, &wctx) {
                    report.degenerate.push(id);
                }
                let track = belief.tracks.get_mut(&id).expect("pending exists");
                track.estimate = Some(estimate_of(track, &set, n_classes));
                track.particles = Some(set);
                report.initialized.push(id);
            }
        }
    }
    for d in spawn {
        let det = &obs.detections[d];
        let id = belief.next_id;
        belief.next_id += 1;
        belief.tracks.insert(
            id,
            Track {
                id,
                hits: 1,
                last_seen: now,
                last_bbox: det.bbox,
                history: vec![(obs.frame, det.bbox)],
                particles: None,
                estimate: None,
                source: det.source,
            },
        );
        if model.config.k_assoc <= 1 {
            // A single hit already initiates the track.
            let track = belief.tracks.get_mut(&id).expect("just inserted");
            let mut trng = ChaCha8Rng::seed_from_u64(rng.random());
            if let Some(set) = init_particles(det, &obs.depth, &model.camera, &obs.robot_pose, &init, &mut trng) {
                track.estimate = Some(estimate_of(track, &set, n_classes));
                track.particles = Some(set);
                report.initialized.push(id);
            }
        }
    }
    belief.degeneracy_events += report.degenerate.len();

    update_instance_model(belief, model);
    belief.time = Some(now);
    belief.frame = obs.frame;
    report
}

/// Folds displacements between converged neighboring tracks into the
/// instance model.
pub fn update_instance_model(belief: &mut Belief, model: &InferenceModel) {
    let p = &model.params;
    let converged: Vec<(u64, Vec3)> = belief
        .active()
        .filter_map(|t| {
            let e = t.estimate?;
            let set = t.particles.as_ref()?;
            (set.translation_spread(e.class) < p.convergence_std)
                .then(|| (t.id, PlacedObject::new(e.class, e.pose, &model.meshes[e.class]).center()))
        })
        .collect();
    for (a, ca) in &converged {
        for (b, cb) in &converged {
            if a != b && (ca - cb).norm() <= p.neighbor_radius {
                belief.instance.update(*a, ca, *b, cb);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::phi_m;
    use crate::simworld::DetectorModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn det(bbox: BBox2D, scores: Vec<f64>) -> Detection {
        Detection { bbox, scores, source: None }
    }

    fn hyp(class: usize, t: Vec3) -> ObjectHypothesis {
        ObjectHypothesis { class, pose: Pose6D::from_translation(t) }
    }

    #[test]
    fn association_cases() {
        let b = BBox2D::new(10.0, 10.0, 30.0, 30.0);
        let a = associate(&[det(b, vec![1.0])], &[(4, b)], 0.5);
        assert_eq!(a.matches, vec![(0, 4)]);

        // IoU 0.3: shift so that overlap/union = 0.3.
        let shifted = BBox2D::new(10.0 + 20.0 * (1.0 - 0.6 / 1.3), 10.0, 30.0 + 20.0 * (1.0 - 0.6 / 1.3), 30.0);
        assert!((shifted.iou(&b) - 0.3).abs() < 1e-9);
        let a = associate(&[det(shifted, vec![1.0])], &[(0, b)], 0.5);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched, vec![0]);
    }

    /// Box of unit height whose IoU with [0,1]x[0,1] equals `iou`.
    fn box_with_iou(x0: f64, iou: f64) -> BBox2D {
        // Same size, shifted by s: IoU = (1-s)/(1+s).
        let s = (1.0 - iou) / (1.0 + iou);
        BBox2D::new(x0 + s, 0.0, x0 + s + 1.0, 1.0)
    }

    #[test]
    fn greedy_association_matches_enumeration() {
        let t1 = BBox2D::new(0.0, 0.0, 1.0, 1.0);
        let t2 = BBox2D::new(100.0, 0.0, 101.0, 1.0);
        // Detection 0: IoU 0.9 with t1. Detection 1: IoU 0.8 with t2.
        let d0 = box_with_iou(0.0, 0.9);
        let d1 = box_with_iou(100.0, 0.8);
        let dets = [det(d0, vec![1.0]), det(d1, vec![1.0])];
        let tracks = [(1, t1), (2, t2)];
        let a = associate(&dets, &tracks, 0.5);
        // Brute force over both permutations: maximize summed IoU among
        // above-threshold pairs.
        let iou = |d: usize, t: usize| dets[d].bbox.iou(&tracks[t].1);
        let straight = iou(0, 0) + iou(1, 1);
        let crossed = iou(0, 1) + iou(1, 0);
        assert!(straight > crossed);
        assert_eq!(a.matches, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn greedy_prefers_larger_iou_first() {
        // d0: {t1: 0.9, t2: 0.6}, d1: {t1: 0.55, t2: 0.8}.
        let ious = vec![vec![0.9, 0.6], vec![0.55, 0.8]];
        let a = greedy_match(&ious, &[1, 2], 0.5);
        // Enumerate both complete assignments; greedy picks the one holding
        // the single largest IoU, which here is also the max-sum assignment.
        let straight = 0.9 + 0.8;
        let crossed = 0.6 + 0.55;
        assert!(straight > crossed);
        assert_eq!(a.matches, vec![(0, 1), (1, 2)]);
        assert!(a.unmatched.is_empty());
    }

    #[test]
    fn ties_go_to_lower_track_id() {
        let b = BBox2D::new(0.0, 0.0, 10.0, 10.0);
        let a = associate(&[det(b, vec![1.0])], &[(9, b), (3, b)], 0.5);
        assert_eq!(a.matches, vec![(0, 3)]);
    }

    #[test]
    fn systematic_resampling_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let mut set = ParticleSet {
                particles: vec![hyp(0, Vec3::x()), hyp(1, Vec3::y())],
                weights: vec![0.75, 0.25],
            };
            // Pad to M = 4 with zero-weight copies.
            set.particles.extend([hyp(0, Vec3::z()), hyp(0, Vec3::z())]);
            set.weights.extend([0.0, 0.0]);
            set.resample(&mut rng);
            let n0 = set.particles.iter().filter(|p| p.pose.translation == Vec3::x()).count();
            let n1 = set.particles.iter().filter(|p| p.pose.translation == Vec3::y()).count();
            assert_eq!((n0, n1), (3, 1));
            assert!(set.weights.iter().all(|&w| w == 0.25));
        }
    }

    #[test]
    fn resampling_uniform_and_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let parts: Vec<_> = (0..10).map(|i| hyp(0, Vec3::new(i as f64, 0.0, 0.0))).collect();
        let mut set = ParticleSet::uniform(parts.clone());
        set.resample(&mut rng);
        assert_eq!(set.particles, parts);

        let mut set = ParticleSet::uniform(parts.clone());
        set.weights = vec![0.0; 10];
        set.weights[6] = 1.0;
        set.resample(&mut rng);
        assert!(set.particles.iter().all(|p| p.pose.translation.x == 6.0));
    }

    #[test]
    fn log_weights_normalize_and_reset() {
        let mut set = ParticleSet::uniform(vec![hyp(0, Vec3::zeros()); 3]);
        assert!(set.set_log_weights(&[-1000.0, -1001.0, -1002.0]));
        let z = 1.0 + (-1.0f64).exp() + (-2.0f64).exp();
        assert_relative_eq!(set.weights[0], 1.0 / z, epsilon = 1e-12);
        assert!(!set.set_log_weights(&[f64::NEG_INFINITY; 3]));
        assert_eq!(set.weights, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn map_estimate_cases() {
        let set = ParticleSet::uniform(vec![hyp(1, Vec3::x()); 4]);
        let (c, p, conf) = map_estimate(&set, 2);
        assert_eq!((c, p.translation), (1, Vec3::x()));
        assert_relative_eq!(conf, 1.0, epsilon = 1e-12);

        let set = ParticleSet {
            particles: vec![hyp(0, Vec3::x()), hyp(0, Vec3::y()), hyp(1, Vec3::z()), hyp(1, -Vec3::z())],
            weights: vec![0.2, 0.4, 0.25, 0.15],
        };
        let (c, p, conf) = map_estimate(&set, 2);
        assert_eq!(c, 0);
        assert_eq!(p.translation, Vec3::y());
        assert_relative_eq!(conf, 0.6, epsilon = 1e-12);
    }

    fn model() -> InferenceModel {
        let camera = CameraModel::new(100.0, 100.0, 64.0, 48.0, 128, 96, 0.1, 10.0).unwrap();
        InferenceModel {
            meshes: vec![Arc::new(TriMesh::cuboid(0.4, 0.4, 0.4)), Arc::new(TriMesh::cuboid(0.4, 0.4, 0.4))],
            camera,
            params: PotentialParams::default(),
            category: CategoryContextModel::default(),
            config: FilterConfig::default(),
            environment: vec![],
        }
    }

    fn basic(particles: usize) -> InitParams<'static> {
        InitParams { particles, jitter: 0.02, center_fraction: 0.25, surface_offsets: &[], orientation: InitOrientation::Uniform }
    }

    #[test]
    fn init_particles_from_one_hot_and_axis_depth() {
        let m = model();
        let depth = DepthImage::from_raw(128, 96, vec![2.0; 128 * 96]).unwrap();
        let d = det(BBox2D::new(54.0, 38.0, 74.0, 58.0), vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = init_particles(&d, &depth, &m.camera, &Pose6D::identity(), &basic(200), &mut rng).unwrap();
        assert_eq!(set.len(), 200);
        assert!(set.particles.iter().all(|p| p.class == 1));
        // Center region spans ±5 px around the principal point: at most
        // 5/100·2 = 0.1 m lateral, plus 5σ jitter.
        for p in &set.particles {
            let t = p.pose.translation;
            assert!(t.x.abs() <= 0.1 + 0.1 && t.y.abs() <= 0.1 + 0.1 && (t.z - 2.0).abs() <= 0.1, "{t:?}");
        }
        let invalid = DepthImage::invalid(128, 96);
        assert!(init_particles(&d, &invalid, &m.camera, &Pose6D::identity(), &basic(10), &mut rng).is_none());
    }

    #[test]
    fn init_centers_pushed_behind_surface() {
        let m = model();
        let depth = DepthImage::from_raw(128, 96, vec![2.0; 128 * 96]).unwrap();
        let d = det(BBox2D::new(54.0, 38.0, 74.0, 58.0), vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = init_particles(&d, &depth, &m.camera, &Pose6D::identity(), &InitParams { jitter: 0.0, surface_offsets: &[0.5, 0.3], ..basic(200) }, &mut rng).unwrap();
        for p in &set.particles {
            let t = p.pose.translation;
            // On-axis depth 2.0 m, pushed 0.3 m along a ray at most ~3° off axis.
            assert!(t.z > 2.29 && t.z < 2.31, "{t:?}");
        }
    }

    #[test]
    fn init_class_fraction_matches_scores() {
        let m = model();
        let depth = DepthImage::from_raw(128, 96, vec![2.0; 128 * 96]).unwrap();
        let d = det(BBox2D::new(54.0, 38.0, 74.0, 58.0), vec![0.3, 0.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set = init_particles(&d, &depth, &m.camera, &Pose6D::identity(), &basic(200), &mut rng).unwrap();
        let frac = set.particles.iter().filter(|p| p.class == 1).count() as f64 / 200.0;
        // 3σ of Binomial(200, 0.7)/200 ≈ 0.097; the tighter 0.06 band holds
        // for this seed and is the documented expectation.
        assert!((frac - 0.7).abs() <= 3.0 * (0.21f64 / 200.0).sqrt(), "{frac}");
    }

    fn pctx<'a>(params: &'a PotentialParams, meshes: &'a [Arc<TriMesh>], supports: &'a [SupportRegion], dt: f64, in_view: bool) -> PredictContext<'a> {
        PredictContext { params, meshes, dt_unseen: dt, dt_unseen_prev: dt - 0.2, in_view, supports }
    }

    #[test]
    fn zero_diffusion_leaves_particles() {
        let m = model();
        let mut params = m.params.clone();
        params.sigma = [1e-300; 6];
        let mut set = ParticleSet::uniform(vec![hyp(0, Vec3::new(0.0, 0.0, 2.0)); 5]);
        let before = set.clone();
        predict(&mut set, &pctx(&params, &m.meshes, &[], 0.0, true), &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in set.particles.iter().zip(&before.particles) {
            assert!(a.pose.translation_error(&b.pose) < 1e-100);
        }
    }

    #[test]
    fn long_unseen_with_certain_move_jumps_to_supports() {
        let m = model();
        let mut params = m.params.clone();
        params.r1 = 0.0;
        params.r2 = 1.0;
        let table = SupportRegion { x_min: 1.0, x_max: 2.0, y_min: 1.0, y_max: 2.0, z: 0.7 };
        let mut set = ParticleSet::uniform(vec![hyp(0, Vec3::new(-5.0, 0.0, 0.2)); 100]);
        let mut ctx = pctx(&params, &m.meshes, std::slice::from_ref(&table), 1e6, false);
        ctx.dt_unseen_prev = 1.0;
        predict(&mut set, &ctx, &mut ChaCha8Rng::seed_from_u64(0));
        for p in &set.particles {
            let bb = m.meshes[0].posed_aabb(&p.pose);
            assert!((bb.min.z - 0.7).abs() < 1e-9);
            let c = bb.center();
            assert!(table.contains_xy(c.x, c.y));
        }
        // In view: never moves.
        let mut set = ParticleSet::uniform(vec![hyp(0, Vec3::new(-5.0, 0.0, 0.2)); 100]);
        predict(&mut set, &pctx(&params, &m.meshes, std::slice::from_ref(&table), 1e6, true), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(set.particles.iter().all(|p| p.pose.translation.x < -4.0));
    }

    #[test]
    fn moved_particles_split_evenly_between_supporters() {
        let m = model();
        let mut params = m.params.clone();
        params.r1 = 0.0;
        params.r2 = 1.0;
        let a = SupportRegion { x_min: 1.0, x_max: 2.0, y_min: 0.0, y_max: 1.0, z: 0.5 };
        let b = SupportRegion { x_min: -2.0, x_max: -1.0, y_min: 0.0, y_max: 1.0, z: 0.5 };
        let supports = [a, b];
        let mut set = ParticleSet::uniform(vec![hyp(0, Vec3::new(0.0, 5.0, 0.2)); 10000]);
        let mut ctx = pctx(&params, &m.meshes, &supports, 1e6, false);
        ctx.dt_unseen_prev = 1.0;
        predict(&mut set, &ctx, &mut ChaCha8Rng::seed_from_u64(7));
        let on_a = set.particles.iter().filter(|p| p.pose.translation.x > 0.0).count() as f64;
        // Binomial(10000, 0.5): 3σ = 150.
        assert!((on_a - 5000.0).abs() <= 150.0, "{on_a}");
    }

    #[test]
    fn no_supporter_falls_back_to_stay() {
        let m = model();
        let mut params = m.params.clone();
        params.r1 = 0.0;
        params.r2 = 1.0;
        let mut set = ParticleSet::uniform(vec![hyp(0, Vec3::new(0.0, 5.0, 0.2)); 50]);
        predict(&mut set, &pctx(&params, &m.meshes, &[], 1e6, false), &mut ChaCha8Rng::seed_from_u64(7));
        assert!(set.particles.iter().all(|p| p.pose.translation == Vec3::new(0.0, 5.0, 0.2)));
    }

    fn weight_fixture() -> (InferenceModel, Pose6D, DepthImage, Vec<Detection>) {
        let m = model();
        let cam_pose = Pose6D::look_at(Vec3::new(0.0, -2.0, 0.6), Vec3::new(0.0, 0.0, 0.2), Vec3::z());
        let truth = Pose6D::from_translation(Vec3::new(0.0, 0.0, 0.2));
        let depth = render::render_depth(&[(&m.meshes[0], truth)], &m.camera, &cam_pose);
        let bbox = render::project_bbox(&m.meshes[0], &truth, &m.camera, &cam_pose).unwrap();
        (m, cam_pose, depth, vec![det(bbox, vec![0.8, 0.2])])
    }

    #[test]
    fn weights_without_neighbors_follow_measurement() {
        let (m, cam_pose, depth, dets) = weight_fixture();
        let parts = vec![hyp(0, Vec3::new(0.0, 0.0, 0.2)), hyp(1, Vec3::new(0.05, 0.0, 0.2)), hyp(0, Vec3::new(0.0, 0.1, 0.25))];
        let mut set = ParticleSet::uniform(parts.clone());
        let instance = InstanceContextModel::default();
        let ctx = WeightContext { model: &m, camera_pose: &cam_pose, depth: &depth, detections: &dets, track_id: 0, neighbors: &[], supports: &[], instance: &instance, surroundings: None, assigned: None };
        assert!(weight(&mut set, &ctx));
        let mctx = MeasurementContext { camera: &m.camera, camera_pose: &cam_pose, depth: &depth, detections: &dets, surroundings: None, assigned: None };
        let raw: Vec<f64> = parts.iter().map(|h| phi_m(h.class, &m.meshes[h.class], &h.pose, &mctx, &m.params).0).collect();
        let total: f64 = raw.iter().sum();
        for (w, r) in set.weights.iter().zip(&raw) {
            assert_relative_eq!(*w, r / total, epsilon = 1e-9);
        }
        assert_relative_eq!(set.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn weights_match_hand_computed_product_with_context() {
        let (m, cam_pose, depth, dets) = weight_fixture();
        let neighbor = Neighbor { id: 5, placed: PlacedObject::new(1, Pose6D::from_translation(Vec3::new(0.5, 0.0, 0.2)), &m.meshes[1]) };
        let mut instance = InstanceContextModel::default();
        instance.update(0, &Vec3::new(0.0, 0.0, 0.2), 5, &Vec3::new(0.5, 0.0, 0.2));
        instance.update(0, &Vec3::new(0.0, 0.0, 0.2), 5, &Vec3::new(0.6, 0.0, 0.2));
        let parts = vec![hyp(0, Vec3::new(0.0, 0.0, 0.2)), hyp(1, Vec3::new(0.2, 0.0, 0.2)), hyp(0, Vec3::new(0.0, 0.1, 0.5))];
        let mut set = ParticleSet::uniform(parts.clone());
        let neighbors = [neighbor];
        let ctx = WeightContext { model: &m, camera_pose: &cam_pose, depth: &depth, detections: &dets, track_id: 0, neighbors: &neighbors, supports: &[], instance: &instance, surroundings: None, assigned: None };
        weight(&mut set, &ctx);
        let mctx = MeasurementContext { camera: &m.camera, camera_pose: &cam_pose, depth: &depth, detections: &dets, surroundings: None, assigned: None };
        let raw: Vec<f64> = parts
            .iter()
            .map(|h| {
                let me = m.place(h);
                let cat = phi_cat(&me, &neighbor.placed, &m.category, &[]);
                let ins = instance.phi_ins(0, &me.center(), 5, &neighbor.placed.center()).unwrap();
                phi_m(h.class, &m.meshes[h.class], &h.pose, &mctx, &m.params).0 * (0.5 * cat + 0.5 * ins)
            })
            .collect();
        let total: f64 = raw.iter().sum();
        for (w, r) in set.weights.iter().zip(&raw) {
            assert!((w - r / total).abs() < 1e-9, "{w} vs {}", r / total);
        }
    }

    #[test]
    fn penetrating_twin_gets_smaller_weight() {
        let (m, cam_pose, _, _) = weight_fixture();
        // No depth and no detections: φ_m is identical (d_max branch) for
        // both particles unless they leave the view.
        let depth = DepthImage::invalid(128, 96);
        let neighbor = Neighbor { id: 1, placed: PlacedObject::new(0, Pose6D::from_translation(Vec3::new(0.0, 0.0, 0.2)), &m.meshes[0]) };
        let parts = vec![hyp(0, Vec3::new(0.3, 0.0, 0.2)), hyp(0, Vec3::new(-0.5, 0.0, 0.2))];
        let mut set = ParticleSet::uniform(parts);
        let instance = InstanceContextModel::default();
        let neighbors = [neighbor];
        let ctx = WeightContext { model: &m, camera_pose: &cam_pose, depth: &depth, detections: &[], track_id: 0, neighbors: &neighbors, supports: &[], instance: &instance, surroundings: None, assigned: None };
        weight(&mut set, &ctx);
        assert!(set.weights[0] < set.weights[1]);
    }

    fn static_scenario() -> Scenario {
        crate::simworld::tests::cube_scenario(DetectorModel::noise_free(2))
    }

    #[test]
    fn empty_stream_only_ages_belief() {
        let s = static_scenario();
        let model = InferenceModel::from_scenario(&s, FilterConfig { particles: 50, ..FilterConfig::default() });
        let mut belief = Belief::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..3 {
            let (mut obs, _) = s.observe_frame(k).unwrap();
            if k == 2 {
                let before: Vec<MapEntry> = belief.map();
                obs.detections.clear();
                obs.depth = DepthImage::invalid(s.camera.width, s.camera.height);
                filter_step(&mut belief, &obs, &model, &mut rng);
                assert_eq!(before, belief.map());
            } else {
                filter_step(&mut belief, &obs, &model, &mut rng);
            }
        }
        assert!(belief.tracks.is_empty());
    }

    #[test]
    fn track_initiates_after_k_frames_and_stays_sized() {
        let s = static_scenario();
        let model = InferenceModel::from_scenario(&s, FilterConfig { particles: 60, ..FilterConfig::default() });
        let mut belief = Belief::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..6 {
            let (obs, _) = s.observe_frame(k).unwrap();
            let report = filter_step(&mut belief, &obs, &model, &mut rng);
            if k == 2 {
                assert_eq!(report.initialized.len(), 1);
            }
            for t in belief.tracks.values() {
                match t.state() {
                    TrackState::Pending => assert!(t.hits >= 1 && t.hits < model.config.k_assoc),
                    TrackState::Active => {
                        let set = t.particles.as_ref().unwrap();
                        assert_eq!(set.len(), 60);
                        assert_relative_eq!(set.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
                    }
                }
            }
        }
        assert_eq!(belief.active().count(), 1);
        assert_eq!(belief.active().next().unwrap().source, Some(7));
    }

    #[test]
    fn tied_weights_pick_particle_nearest_mean() {
        let set = ParticleSet::uniform(vec![hyp(0, Vec3::zeros()), hyp(0, Vec3::x() * 3.0), hyp(0, Vec3::x() * 1.1), hyp(1, Vec3::x() * 1.0)]);
        let (c, p, _) = map_estimate(&set, 2);
        assert_eq!(c, 0);
        assert_eq!(p.translation, Vec3::x() * 1.1);
    }

    #[test]
    fn no_initiation_near_border() {
        let s = static_scenario();
        let model = InferenceModel::from_scenario(&s, FilterConfig { particles: 30, border_margin_px: 1000.0, ..FilterConfig::default() });
        let mut belief = Belief::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..6 {
            let (obs, _) = s.observe_frame(k).unwrap();
            assert!(filter_step(&mut belief, &obs, &model, &mut rng).initialized.is_empty());
        }
        assert_eq!(belief.active().count(), 0);
        assert!(belief.tracks.values().all(|t| t.hits >= 1));
    }

    #[test]
    fn overlapping_detection_spawns_only_with_another_class() {
        let s = static_scenario();
        let model = InferenceModel::from_scenario(&s, FilterConfig { particles: 30, ..FilterConfig::default() });
        let pending_after = |flip: bool| {
            let mut belief = Belief::default();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for k in 0..4 {
                filter_step(&mut belief, &s.observe_frame(k).unwrap().0, &model, &mut rng);
            }
            let (mut obs, _) = s.observe_frame(4).unwrap();
            let mut extra = obs.detections[0].clone();
            if flip {
                extra.scores.reverse();
            }
            obs.detections.push(extra);
            filter_step(&mut belief, &obs, &model, &mut rng);
            belief.tracks.values().filter(|t| t.state() == TrackState::Pending).count()
        };
        assert_eq!(pending_after(false), 0);
        assert_eq!(pending_after(true), 1);
    }

    #[test]
    fn filter_is_deterministic() {
        let s = static_scenario();
        let model = InferenceModel::from_scenario(&s, FilterConfig { particles: 40, ..FilterConfig::default() });
        let run = || {
            let mut belief = Belief::default();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut out = Vec::new();
            for k in 0..8 {
                let (obs, _) = s.observe_frame(k).unwrap();
                filter_step(&mut belief, &obs, &model, &mut rng);
                out.push(belief.snapshot().to_json());
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn snapshot_round_trip() {
        let snap = BeliefSnapshot {
            frame: 3,
            time: 1.5,
            objects: vec![MapEntry {
                id: 2,
                class: 1,
                pose: Pose6D::new(Vec3::new(0.1, -0.2, 0.3), UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3)),
                confidence: 0.73,
                last_seen: 1.25,
            }],
        };
        let back = BeliefSnapshot::from_json(&snap.to_json()).unwrap();
        assert_eq!(back, snap);
    }

    proptest! {
        #[test]
        fn resample_preserves_count(ws in prop::collection::vec(0.0f64..1.0, 1..60), seed in any::<u64>()) {
            let m = ws.len();
            let mut set = ParticleSet::uniform((0..m).map(|i| hyp(0, Vec3::new(i as f64, 0.0, 0.0))).collect());
            let log_w: Vec<f64> = ws.iter().map(|w| w.ln()).collect();
            set.set_log_weights(&log_w);
            prop_assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            set.resample(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(set.len(), m);
        }

        #[test]
        fn systematic_counts_within_one_of_expectation(ws in prop::collection::vec(0.01f64..1.0, 2..30), seed in any::<u64>()) {
            let m = ws.len();
            let total: f64 = ws.iter().sum();
            let mut set = ParticleSet {
                particles: (0..m).map(|i| hyp(0, Vec3::new(i as f64, 0.0, 0.0))).collect(),
                weights: ws.iter().map(|w| w / total).collect(),
            };
            let expected: Vec<f64> = set.weights.iter().map(|w| w * m as f64).collect();
            set.resample(&mut ChaCha8Rng::seed_from_u64(seed));
            for (i, e) in expected.iter().enumerate() {
                let n = set.particles.iter().filter(|p| p.pose.translation.x == i as f64).count() as f64;
                prop_assert!((n - e).abs() < 1.0 + 1e-9, "particle {} count {} expected {}", i, n, e);
            }
        }
    }
}
