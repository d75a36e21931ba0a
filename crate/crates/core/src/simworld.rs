//! Scripted ground-truth worlds and the synthetic sensor: depth rendering with
//! noise plus a parametric object detector.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{parse_obj, CameraModel, GeometryError, Pose6D, TriMesh, Vec3};
use crate::potentials::{CategoryContextModel, ParamError, PotentialParams};
use crate::render::{self, BBox2D, DepthImage, SceneItem, INVALID_DEPTH};

/// Depth agreement (m) for a pixel to count as showing a given object.
pub const VISIBILITY_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("mesh {path}: {source}")]
    Mesh { path: PathBuf, source: GeometryError },
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid potentials: {0}")]
    Params(#[from] ParamError),
    #[error("time {t} outside [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot read detection log: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    /// Row `c`: distribution of the emitted label for true class `c`.
    pub confusion: Vec<Vec<f64>>,
    pub score_temperature: f64,
    pub p_detect_visible: f64,
    pub v_min: f64,
    pub bbox_jitter_sigma: f64,
    pub false_positive_rate: f64,
}

impl DetectorModel {
    /// Default noise levels for `n` classes with a perfect confusion matrix.
    pub fn with_identity(n: usize) -> Self {
        let confusion = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self {
            confusion,
            score_temperature: 0.1,
            p_detect_visible: 0.95,
            v_min: 0.3,
            bbox_jitter_sigma: 1.0,
            false_positive_rate: 0.0,
        }
    }

    /// Exact detector: every sufficiently visible object, true label, exact box.
    pub fn noise_free(n: usize) -> Self {
        Self { p_detect_visible: 1.0, bbox_jitter_sigma: 0.0, ..Self::with_identity(n) }
    }

    pub fn validate(&self, n_classes: usize) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.confusion.len() != n_classes {
            return bad(format!("confusion has {} rows, expected {n_classes}", self.confusion.len()));
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.len() != n_classes {
                return bad(format!("confusion row {i} has {} entries", row.len()));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return bad(format!("confusion row {i} has entries outside [0, 1]"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("confusion row {i} sums to {s}"));
            }
        }
        for (name, p) in [("p_detect_visible", self.p_detect_visible), ("v_min", self.v_min)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be a probability"));
            }
        }
        if !(self.score_temperature > 0.0) || self.bbox_jitter_sigma < 0.0 || self.false_positive_rate < 0.0 {
            return bad("temperature must be positive; jitter and false-positive rate non-negative".into());
        }
        Ok(())
    }

    /// Softmax of the one-hot label vector at this temperature.
    pub fn soften(&self, label: usize, n: usize) -> Vec<f64> {
        let hot = (1.0 / self.score_temperature).exp();
        let total = hot + (n - 1) as f64;
        (0..n).map(|c| if c == label { hot / total } else { 1.0 / total }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox2D,
    pub scores: Vec<f64>,
    /// Ground-truth object behind the detection (simulation only; never read
    /// by inference).
    #[serde(skip)]
    pub source: Option<u64>,
}

impl Detection {
    pub fn label(&self) -> usize {
        argmax(&self.scores)
    }

    pub fn confidence(&self) -> f64 {
        self.scores.get(self.label()).copied().unwrap_or(0.0)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub frame: usize,
    pub time: f64,
    pub robot_pose: Pose6D,
    pub depth: DepthImage,
    pub detections: Vec<Detection>,
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    /// Relative OBJ path.
    pub mesh: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetry_axis: Option<[f64; 3]>,
    /// Decay time (s) of the stay probability for this class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub id: u64,
    pub class: usize,
    /// Overrides the class mesh for rendering the ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
    pub pose: Pose6D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticSpec {
    pub mesh: String,
    pub pose: Pose6D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub time: f64,
    pub pose: Pose6D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveEvent {
    pub time: f64,
    pub object: u64,
    pub pose: Pose6D,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialsSection {
    pub params: PotentialParams,
    pub category: CategoryContextModel,
}

/// Serialized scenario: mesh references are paths relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub classes: Vec<ClassSpec>,
    pub object_instances: Vec<InstanceSpec>,
    #[serde(default)]
    pub environment: Vec<StaticSpec>,
    pub trajectory: Vec<Waypoint>,
    #[serde(default)]
    pub move_events: Vec<MoveEvent>,
    pub camera: CameraModel,
    pub detector: DetectorModel,
    pub depth_noise_sigma: f64,
    pub seed: u64,
    pub duration: f64,
    pub frame_rate: f64,
    #[serde(default)]
    pub potentials: PotentialsSection,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Resolves mesh references through `load` and validates the result.
    pub fn resolve_with<F>(&self, mut load: F) -> Result<Scenario, ScenarioError>
    where
        F: FnMut(&str) -> Result<TriMesh, ScenarioError>,
    {
        let mut cache: BTreeMap<String, Arc<TriMesh>> = BTreeMap::new();
        let mut get = |path: &str| -> Result<Arc<TriMesh>, ScenarioError> {
            if let Some(m) = cache.get(path) {
                return Ok(m.clone());
            }
            let m = Arc::new(load(path)?);
            cache.insert(path.to_string(), m.clone());
            Ok(m)
        };
        let classes = self
            .classes
            .iter()
            .map(|c| {
                let symmetry_axis = match c.symmetry_axis {
                    Some(a) => {
                        let v = Vector3::from(a);
                        if v.norm() < 1e-9 {
                            return Err(ScenarioError::Invalid(format!("class {}: zero symmetry axis", c.name)));
                        }
                        Some(Unit::new_normalize(v))
                    }
                    None => None,
                };
                Ok(ObjectClass { name: c.name.clone(), mesh: get(&c.mesh)?, symmetry_axis, mu: c.mu })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let objects = self
            .object_instances
            .iter()
            .map(|o| {
                let class = classes
                    .get(o.class)
                    .ok_or_else(|| ScenarioError::Invalid(format!("object {}: class index {} out of range", o.id, o.class)))?;
                let mesh = match &o.mesh {
                    Some(p) => get(p)?,
                    None => class.mesh.clone(),
                };
                Ok(ObjectInstance { id: o.id, class: o.class, mesh, initial_pose: o.pose })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let environment = self
            .environment
            .iter()
            .map(|s| Ok((get(&s.mesh)?, s.pose)))
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let mut params = self.potentials.params.clone();
        if params.mu.is_empty() {
            params.mu = classes.iter().map(|c| c.mu.unwrap_or(params.default_mu)).collect();
        }
        let scenario = Scenario {
            name: self.name.clone(),
            classes,
            objects,
            environment,
            trajectory: self.trajectory.clone(),
            move_events: self.move_events.clone(),
            camera: self.camera,
            detector: self.detector.clone(),
            depth_noise_sigma: self.depth_noise_sigma,
            seed: self.seed,
            duration: self.duration,
            frame_rate: self.frame_rate,
            params,
            category: self.potentials.category.clone(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Loads meshes from disk relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Scenario, ScenarioError> {
        self.resolve_with(|rel| {
            let path = base_dir.join(rel);
            let text = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
            parse_obj(&text).map_err(|source| ScenarioError::Mesh { path, source })
        })
    }
}

/// Reads and resolves a scenario JSON file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    let file = ScenarioFile::from_json(&text)?;
    file.resolve(path.parent().unwrap_or(Path::new(".")))
}

// ---------------------------------------------------------------------------
// Resolved scenario

#[derive(Debug, Clone)]
pub struct ObjectClass {
    pub name: String,
    pub mesh: Arc<TriMesh>,
    pub symmetry_axis: Option<Unit<Vector3<f64>>>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ObjectInstance {
    pub id: u64,
    pub class: usize,
    pub mesh: Arc<TriMesh>,
    pub initial_pose: Pose6D,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub classes: Vec<ObjectClass>,
    pub objects: Vec<ObjectInstance>,
    pub environment: Vec<(Arc<TriMesh>, Pose6D)>,
    pub trajectory: Vec<Waypoint>,
    pub move_events: Vec<MoveEvent>,
    pub camera: CameraModel,
    pub detector: DetectorModel,
    pub depth_noise_sigma: f64,
    pub seed: u64,
    pub duration: f64,
    pub frame_rate: f64,
    pub params: PotentialParams,
    pub category: CategoryContextModel,
}

/// Ground-truth state of the world at one instant.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub camera_pose: Pose6D,
    /// `(object id, class, pose)` in scenario order.
    pub objects: Vec<(u64, usize, Pose6D)>,
}

/// Per-object ground truth for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthObject {
    pub id: u64,
    pub class: usize,
    pub pose: Pose6D,
    pub bbox: Option<BBox2D>,
    pub in_frustum: bool,
    pub visible_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct FrameTruth {
    pub frame: usize,
    pub time: f64,
    pub camera_pose: Pose6D,
    pub objects: Vec<TruthObject>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        self.camera.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.detector.validate(self.classes.len())?;
        self.params.validate()?;
        self.category.validate()?;
        if !(self.duration >= 0.0) || !(self.frame_rate > 0.0) {
            return bad("duration must be >= 0 and frame_rate > 0".into());
        }
        if self.depth_noise_sigma < 0.0 {
            return bad("depth_noise_sigma must be non-negative".into());
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return bad(format!("duplicate object id {}", o.id));
            }
            if o.class >= self.classes.len() {
                return bad(format!("object {}: class index out of range", o.id));
            }
        }
        if self.trajectory.is_empty() {
            return bad("trajectory needs at least one waypoint".into());
        }
        if self.trajectory.windows(2).any(|w| w[1].time < w[0].time) {
            return bad("trajectory waypoints must be time-ordered".into());
        }
        for e in &self.move_events {
            if !(0.0..=self.duration).contains(&e.time) {
                return bad(format!("move event at {} outside [0, {}]", e.time, self.duration));
            }
            if !ids.contains(&e.object) {
                return bad(format!("move event references unknown object {}", e.object));
            }
        }
        for c in &self.category.cooccurrence {
            if c.a >= self.classes.len() || c.b >= self.classes.len() {
                return bad("co-occurrence references unknown class".into());
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_mesh(&self, class: usize) -> &TriMesh {
        &self.classes[class].mesh
    }

    pub fn object(&self, id: u64) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate + 1e-9).floor() as usize + 1
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        (frame as f64 / self.frame_rate).min(self.duration)
    }

    /// Camera pose at `t`: linear in position, spherical-linear in rotation
    /// between the bracketing waypoints; held constant outside them.
    pub fn camera_pose_at(&self, t: f64) -> Pose6D {
        let wp = &self.trajectory;
        if t <= wp[0].time {
            return wp[0].pose;
        }
        for w in wp.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if t <= b.time {
                let span = b.time - a.time;
                let s = if span > 0.0 { (t - a.time) / span } else { 1.0 };
                let translation = a.pose.translation.lerp(&b.pose.translation, s);
                let rotation = a.pose.rotation.try_slerp(&b.pose.rotation, s, 1e-12).unwrap_or(b.pose.rotation);
                return Pose6D::new(translation, rotation);
            }
        }
        wp[wp.len() - 1].pose
    }

    /// Pose of object `id` at `t`: the latest move event at or before `t`,
    /// else its initial pose.
    pub fn object_pose_at(&self, obj: &ObjectInstance, t: f64) -> Pose6D {
        self.move_events
            .iter()
            .filter(|e| e.object == obj.id && e.time <= t)
            .max_by(|a, b| a.time.total_cmp(&b.time))
            .map(|e| e.pose)
            .unwrap_or(obj.initial_pose)
    }

    pub fn world_at(&self, t: f64) -> Result<WorldState, ScenarioError> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(ScenarioError::TimeOutOfRange { t, duration: self.duration });
        }
        Ok(WorldState {
            camera_pose: self.camera_pose_at(t),
            objects: self.objects.iter().map(|o| (o.id, o.class, self.object_pose_at(o, t))).collect(),
        })
    }

    /// Environment plus all objects at their true poses.
    pub fn scene_items(&self, world: &WorldState) -> Vec<SceneItem<'_>> {
        let mut items: Vec<SceneItem<'_>> = self.environment.iter().map(|(m, p)| (m.as_ref(), *p)).collect();
        for (obj, (_, _, pose)) in self.objects.iter().zip(&world.objects) {
            items.push((obj.mesh.as_ref(), *pose));
        }
        items
    }

    pub fn environment_items(&self) -> Vec<SceneItem<'_>> {
        self.environment.iter().map(|(m, p)| (m.as_ref(), *p)).collect()
    }

    /// Noise-free depth and per-object visibility at time `t`.
    pub fn truth_at(&self, frame: usize, t: f64) -> Result<(FrameTruth, DepthImage), ScenarioError> {
        let world = self.world_at(t)?;
        let items = self.scene_items(&world);
        let depth = render::render_depth(&items, &self.camera, &world.camera_pose);
        let objects = self
            .objects
            .iter()
            .zip(&world.objects)
            .map(|(obj, &(id, class, pose))| {
                let vis = render::visibility_against(&obj.mesh, &pose, &depth, &self.camera, &world.camera_pose, VISIBILITY_TOLERANCE);
                TruthObject {
                    id,
                    class,
                    pose,
                    bbox: render::project_bbox(&obj.mesh, &pose, &self.camera, &world.camera_pose),
                    in_frustum: vis.in_frustum,
                    visible_fraction: vis.visible_fraction,
                }
            })
            .collect();
        Ok((FrameTruth { frame, time: t, camera_pose: world.camera_pose, objects }, depth))
    }

    /// Deterministic RNG for a frame: seeded from `seed + frame`.
    pub fn frame_rng(&self, frame: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(frame as u64))
    }

    /// Observation and ground truth of frame `frame`.
    pub fn observe_frame(&self, frame: usize) -> Result<(Observation, FrameTruth), ScenarioError> {
        let mut rng = self.frame_rng(frame);
        self.synth_observe(frame, self.frame_time(frame), &mut rng)
    }

    pub fn synth_observe<R: Rng + ?Sized>(
        &self,
        frame: usize,
        t: f64,
        rng: &mut R,
    ) -> Result<(Observation, FrameTruth), ScenarioError> {
        let (truth, clean) = self.truth_at(frame, t)?;
        let mut depth = clean;
        if self.depth_noise_sigma > 0.0 {
            let noise = Normal::new(0.0, self.depth_noise_sigma).expect("finite sigma");
            let (near, far) = (self.camera.near as f32, self.camera.far as f32);
            for d in depth.data_mut().iter_mut().filter(|d| **d != INVALID_DEPTH) {
                let n: f64 = noise.sample(rng);
                *d = (*d + n as f32).clamp(near, far);
            }
        }
        let det = &self.detector;
        let n = self.num_classes();
        let mut detections = Vec::new();
        for obj in &truth.objects {
            let Some(bbox) = obj.bbox else { continue };
            if obj.visible_fraction < det.v_min {
                continue;
            }
            if rng.random::<f64>() >= det.p_detect_visible {
                continue;
            }
            let bbox = if det.bbox_jitter_sigma > 0.0 {
                let j = Normal::new(0.0, det.bbox_jitter_sigma).expect("finite sigma");
                BBox2D::clipped(
                    bbox.x_min + j.sample(rng),
                    bbox.y_min + j.sample(rng),
                    bbox.x_max + j.sample(rng),
                    bbox.y_max + j.sample(rng),
                    self.camera.width,
                    self.camera.height,
                )
            } else {
                bbox
            };
            let label = sample_categorical(&det.confusion[obj.class], rng);
            detections.push(Detection { bbox, scores: det.soften(label, n), source: Some(obj.id) });
        }
        if det.false_positive_rate > 0.0 {
            let count: f64 = Poisson::new(det.false_positive_rate).expect("positive rate").sample(rng);
            let (w, h) = (self.camera.width as f64, self.camera.height as f64);
            for _ in 0..count as usize {
                let bw = rng.random_range(0.05..0.3) * w;
                let bh = rng.random_range(0.05..0.3) * h;
                let x = rng.random_range(0.0..(w - bw));
                let y = rng.random_range(0.0..(h - bh));
                let raw: Vec<f64> = (0..n).map(|_| 1.0 + 0.5 * rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                detections.push(Detection {
                    bbox: BBox2D::clipped(x, y, x + bw, y + bh, self.camera.width, self.camera.height),
                    scores: raw.into_iter().map(|s| s / total).collect(),
                    source: None,
                });
            }
        }
        let obs = Observation { frame, time: t, robot_pose: truth.camera_pose, depth, detections };
        Ok((obs, truth))
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LogLine {
    frame: usize,
    bbox: [f64; 4],
    scores: Vec<f64>,
}

/// Per-frame detections read from a JSON-lines log, one detection per line:
/// `{"frame": 0, "bbox": [x_min, y_min, x_max, y_max], "scores": [...]}`.
/// Score vectors within 1e-3 of the simplex are renormalized.
pub fn parse_detection_log(text: &str, num_classes: Option<usize>) -> Result<BTreeMap<usize, Vec<Detection>>, LogError> {
    let mut out: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: LogLine = serde_json::from_str(raw).map_err(|e| LogError::Schema { line, message: e.to_string() })?;
        if let Some(k) = num_classes {
            if rec.scores.len() != k {
                return Err(LogError::Schema { line, message: format!("expected {k} scores, got {}", rec.scores.len()) });
            }
        }
        if rec.scores.is_empty() || rec.scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(LogError::Schema { line, message: "scores must be non-negative and finite".into() });
        }
        let sum: f64 = rec.scores.iter().sum();
        let scores = if (sum - 1.0).abs() <= 1e-6 {
            rec.scores
        } else if (sum - 1.0).abs() <= 1e-3 {
            log::warn!("detection log line {line}: scores sum to {sum}, renormalizing");
            rec.scores.iter().map(|s| s / sum).collect()
        } else {
            return Err(LogError::Schema { line, message: format!("scores sum to {sum}, not a probability vector") });
        };
        let [x0, y0, x1, y1] = rec.bbox;
        if !(x0 <= x1 && y0 <= y1) {
            return Err(LogError::Schema { line, message: "bbox must be [x_min, y_min, x_max, y_max]".into() });
        }
        out.entry(rec.frame).or_default().push(Detection { bbox: BBox2D::new(x0, y0, x1, y1), scores, source: None });
    }
    Ok(out)
}

pub fn load_detection_log(path: &Path, num_classes: Option<usize>) -> Result<BTreeMap<usize, Vec<Detection>>, LogError> {
    parse_detection_log(&std::fs::read_to_string(path)?, num_classes)
}

/// Replaces synthetic detections with logged ones at matching frames (frames
/// absent from the log get none).
pub fn substitute_detections(obs: &mut Observation, log: &BTreeMap<usize, Vec<Detection>>) {
    obs.detections = log.get(&obs.frame).cloned().unwrap_or_default();
}

/// A camera-frame point for a world point, used by tests and templates.
pub fn to_camera(camera_pose: &Pose6D, p: &Vec3) -> Vec3 {
    camera_pose.inverse().transform_point(p)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Minimal in-memory scenario: a cube on the floor in front of a static camera.
    pub fn cube_scenario(detector: DetectorModel) -> Scenario {
        let file = ScenarioFile {
            name: "unit".into(),
            classes: vec![
                ClassSpec { name: "cube".into(), mesh: "cube.obj".into(), symmetry_axis: None, mu: None },
                ClassSpec { name: "other".into(), mesh: "cube.obj".into(), symmetry_axis: None, mu: None },
            ],
            object_instances: vec![InstanceSpec { id: 7, class: 0, mesh: None, pose: Pose6D::from_translation(Vec3::new(0.0, 2.0, 0.2)) }],
            environment: vec![],
            trajectory: vec![
                Waypoint { time: 0.0, pose: Pose6D::look_at(Vec3::new(0.0, 0.0, 0.6), Vec3::new(0.0, 2.0, 0.2), Vec3::z()) },
                Waypoint { time: 10.0, pose: Pose6D::look_at(Vec3::new(0.2, 0.0, 0.6), Vec3::new(0.0, 2.0, 0.2), Vec3::z()) },
            ],
            move_events: vec![MoveEvent { time: 5.0, object: 7, pose: Pose6D::from_translation(Vec3::new(0.3, 2.0, 0.2)) }],
            camera: CameraModel::new(120.0, 120.0, 80.0, 60.0, 160, 120, 0.1, 10.0).unwrap(),
            detector,
            depth_noise_sigma: 0.0,
            seed: 11,
            duration: 10.0,
            frame_rate: 2.0,
            potentials: PotentialsSection::default(),
        };
        file.resolve_with(|_| Ok(TriMesh::cuboid(0.4, 0.4, 0.4))).unwrap()
    }

    #[test]
    fn world_at_interpolates_and_applies_moves() {
        let s = cube_scenario(DetectorModel::noise_free(2));
        let w0 = s.world_at(0.0).unwrap();
        assert_eq!(w0.objects[0].2, s.objects[0].initial_pose);
        assert_eq!(w0.camera_pose, s.trajectory[0].pose);
        let w = s.world_at(6.0).unwrap();
        assert_relative_eq!(w.objects[0].2.translation.x, 0.3);
        let mid = s.world_at(5.0).unwrap();
        assert_relative_eq!(mid.camera_pose.translation.x, 0.1, epsilon = 1e-12);
        assert!(matches!(s.world_at(10.5), Err(ScenarioError::TimeOutOfRange { .. })));
        assert!(s.world_at(-0.1).is_err());
    }

    #[test]
    fn linear_interpolation_midpoint() {
        let mut s = cube_scenario(DetectorModel::noise_free(2));
        s.trajectory = vec![
            Waypoint { time: 0.0, pose: Pose6D::from_translation(Vec3::zeros()) },
            Waypoint { time: 2.0, pose: Pose6D::from_translation(Vec3::new(2.0, 0.0, 0.0)) },
        ];
        assert_relative_eq!(s.camera_pose_at(1.0).translation, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn noise_free_detector_reports_geometry() {
        let s = cube_scenario(DetectorModel::noise_free(2));
        let (obs, truth) = s.observe_frame(0).unwrap();
        assert_eq!(obs.detections.len(), 1);
        let d = &obs.detections[0];
        assert_eq!(Some(d.bbox), truth.objects[0].bbox);
        assert_eq!(d.label(), 0);
        assert_eq!(d.source, Some(7));
        assert!((d.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!((obs.depth.width(), obs.depth.height()), (160, 120));
    }

    #[test]
    fn hidden_object_is_not_detected() {
        let mut s = cube_scenario(DetectorModel::noise_free(2));
        let cam = s.trajectory[0].pose;
        let wall = Arc::new(TriMesh::quad(3.0, 3.0));
        let wall_pose = Pose6D::new(cam.transform_point(&Vec3::new(0.0, 0.0, 0.8)), cam.rotation);
        s.environment.push((wall, wall_pose));
        let (obs, truth) = s.observe_frame(0).unwrap();
        assert!(truth.objects[0].visible_fraction < s.detector.v_min);
        assert!(obs.detections.is_empty());
    }

    #[test]
    fn observations_are_deterministic() {
        let mut det = DetectorModel::with_identity(2);
        det.false_positive_rate = 1.5;
        det.bbox_jitter_sigma = 2.0;
        let mut s = cube_scenario(det);
        s.depth_noise_sigma = 0.01;
        let (a, _) = s.observe_frame(3).unwrap();
        let (b, _) = s.observe_frame(3).unwrap();
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.detections, b.detections);
    }

    #[test]
    fn confusion_rate_matches_binomial() {
        let mut det = DetectorModel::noise_free(2);
        det.confusion = vec![vec![0.3, 0.7], vec![0.0, 1.0]];
        let s = cube_scenario(det);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut confused = 0;
        for k in 0..1000 {
            let (obs, _) = s.synth_observe(k, 0.0, &mut rng).unwrap();
            assert_eq!(obs.detections.len(), 1);
            if obs.detections[0].label() == 1 {
                confused += 1;
            }
        }
        // Binomial(1000, 0.7): mean 700, sd 14.5.
        assert!((650..=750).contains(&confused), "{confused}");
    }

    #[test]
    fn expected_detection_count_within_three_sigma() {
        let mut det = DetectorModel::with_identity(2);
        det.p_detect_visible = 0.8;
        det.false_positive_rate = 0.5;
        let s = cube_scenario(det);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames = 600;
        let total: usize = (0..frames).map(|k| s.synth_observe(k, 0.0, &mut rng).unwrap().0.detections.len()).sum();
        let mean = 0.8 + 0.5;
        let var = 0.8 * 0.2 + 0.5;
        let sd = (var * frames as f64).sqrt();
        assert!((total as f64 - mean * frames as f64).abs() <= 3.0 * sd, "{total}");
    }

    #[test]
    fn scenario_validation_rejects_bad_input() {
        let s = cube_scenario(DetectorModel::noise_free(2));
        let mut bad = s.clone();
        bad.detector.confusion[0] = vec![0.5, 0.4];
        assert!(bad.validate().is_err());
        let mut bad = s.clone();
        bad.move_events[0].time = 99.0;
        assert!(bad.validate().is_err());
        let mut bad = s;
        bad.objects.push(bad.objects[0].clone());
        assert!(bad.validate().is_err());
    }

    #[test]
    fn detection_log_parsing() {
        assert!(parse_detection_log("", Some(3)).unwrap().is_empty());
        let log = parse_detection_log(r#"{"frame": 0, "bbox": [0, 0, 10, 10], "scores": [1, 0, 0]}"#, Some(3)).unwrap();
        assert_eq!(log[&0].len(), 1);
        assert_eq!(log[&0][0].bbox, BBox2D::new(0.0, 0.0, 10.0, 10.0));
        assert_eq!(log[&0][0].scores, vec![1.0, 0.0, 0.0]);

        let log = parse_detection_log(r#"{"frame": 2, "bbox": [0, 0, 5, 5], "scores": [0.5005, 0.5]}"#, None).unwrap();
        assert!((log[&2][0].scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let err = parse_detection_log("\n{\"frame\": 1, \"bbox\": [0,0,1,1], \"scores\": [0.7, 0.7]}", None).unwrap_err();
        assert!(matches!(err, LogError::Schema { line: 2, .. }));
        let err = parse_detection_log(r#"{"frame": "x"}"#, None).unwrap_err();
        assert!(matches!(err, LogError::Schema { line: 1, .. }));
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = cube_scenario(DetectorModel::noise_free(2));
        let file = ScenarioFile {
            name: s.name.clone(),
            classes: vec![ClassSpec { name: "cube".into(), mesh: "cube.obj".into(), symmetry_axis: Some([0.0, 0.0, 1.0]), mu: Some(4.0) }],
            object_instances: vec![InstanceSpec { id: 1, class: 0, mesh: None, pose: Pose6D::identity() }],
            environment: vec![],
            trajectory: s.trajectory.clone(),
            move_events: vec![],
            camera: s.camera,
            detector: DetectorModel::noise_free(1),
            depth_noise_sigma: 0.0,
            seed: 1,
            duration: 1.0,
            frame_rate: 1.0,
            potentials: PotentialsSection::default(),
        };
        let back = ScenarioFile::from_json(&file.to_json()).unwrap();
        assert_eq!(back, file);
        let resolved = back.resolve_with(|_| Ok(TriMesh::cuboid(1.0, 1.0, 1.0))).unwrap();
        assert_eq!(resolved.params.mu, vec![4.0]);
        assert_eq!(resolved.frame_count(), 2);
    }
}
