//! Named scenario templates: small rooms with tables, bins, vases and bowls
//! seen by a scripted camera.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{CameraModel, Pose6D, TriMesh, Vec3};
use crate::potentials::{CategoryContextModel, CoOccurrence, PotentialParams};
use crate::render::SimilarityConfig;
use crate::simworld::{
    ClassSpec, DetectorModel, InstanceSpec, MoveEvent, PotentialsSection, Scenario, ScenarioError, ScenarioFile, StaticSpec,
    Waypoint,
};

pub const TEMPLATES: [&str; 5] = ["static-single", "multi-visit", "confusable-context", "occlusion", "move-while-unseen"];

const SEGMENTS: usize = 16;

#[derive(Debug, Error)]
#[error("unknown template '{name}'; available: {}", TEMPLATES.join(", "))]
pub struct UnknownTemplate {
    pub name: String,
}

/// A scenario file together with the meshes it references.
#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub file: ScenarioFile,
    pub meshes: BTreeMap<String, TriMesh>,
}

impl GeneratedScenario {
    pub fn resolve(&self) -> Result<Scenario, ScenarioError> {
        self.file.resolve_with(|path| {
            self.meshes.get(path).cloned().ok_or_else(|| ScenarioError::Invalid(format!("no mesh for {path}")))
        })
    }

    /// Writes `<dir>/<stem>.json` plus the OBJ files beside it.
    pub fn write_to(&self, dir: &Path, stem: &str) -> std::io::Result<PathBuf> {
        for (rel, mesh) in &self.meshes {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, mesh.to_obj())?;
        }
        let json = dir.join(format!("{stem}.json"));
        std::fs::create_dir_all(dir)?;
        std::fs::write(&json, self.file.to_json())?;
        Ok(json)
    }
}

pub fn generate(name: &str, seed: u64) -> Result<GeneratedScenario, UnknownTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7_a110);
    let g = match name {
        "static-single" => static_single(seed, &mut rng),
        "multi-visit" => multi_visit(seed, &mut rng),
        "confusable-context" => confusable_context(seed, &mut rng),
        "occlusion" => occlusion(seed, &mut rng),
        "move-while-unseen" => move_while_unseen(seed, &mut rng),
        _ => return Err(UnknownTemplate { name: name.to_string() }),
    };
    Ok(g)
}

pub fn camera() -> CameraModel {
    CameraModel::new(150.0, 150.0, 80.0, 60.0, 160, 120, 0.1, 10.0).expect("valid intrinsics")
}

pub fn table_mesh() -> TriMesh {
    TriMesh::tapered_cylinder(0.35, 0.35, 0.6, SEGMENTS)
}

pub fn bin_mesh() -> TriMesh {
    TriMesh::tapered_cylinder(0.12, 0.16, 0.34, SEGMENTS)
}

pub fn vase_mesh() -> TriMesh {
    TriMesh::tapered_cylinder(0.10, 0.06, 0.32, SEGMENTS)
}

pub fn barrel_mesh() -> TriMesh {
    TriMesh::tapered_cylinder(0.22, 0.20, 0.9, SEGMENTS)
}

pub fn bowl_mesh() -> TriMesh {
    TriMesh::tapered_cylinder(0.09, 0.15, 0.16, SEGMENTS)
}

/// Potentials shared by all templates.
pub fn template_params() -> PotentialParams {
    PotentialParams {
        sigma: [1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4],
        lambda: 2500.0,
        t_sig: 2.0,
        delta: 1e-8,
        similarity: SimilarityConfig { max_diff: Some(0.1), min_extent_px: 4.0, ..SimilarityConfig::default() },
        ..PotentialParams::default()
    }
}

struct Builder {
    classes: Vec<ClassSpec>,
    meshes: BTreeMap<String, TriMesh>,
    heights: Vec<f64>,
    objects: Vec<InstanceSpec>,
    environment: Vec<StaticSpec>,
}

impl Builder {
    fn new() -> Self {
        let mut b = Self { classes: vec![], meshes: BTreeMap::new(), heights: vec![], objects: vec![], environment: vec![] };
        let floor = "meshes/floor.obj".to_string();
        b.meshes.insert(floor.clone(), TriMesh::quad(12.0, 12.0));
        b.environment.push(StaticSpec { mesh: floor, pose: Pose6D::from_translation(Vec3::new(0.0, 3.0, 0.0)) });
        let wall = "meshes/wall.obj".to_string();
        b.meshes.insert(wall.clone(), TriMesh::quad(12.0, 4.0));
        // Quad lies in x-y; stand it up as the x-z plane at y = 5.
        let up = Pose6D::from_rotation_vector(Vec3::new(0.0, 5.0, 2.0), Vec3::new(PI / 2.0, 0.0, 0.0));
        b.environment.push(StaticSpec { mesh: wall, pose: up });
        b
    }

    fn class(&mut self, name: &str, mesh: TriMesh, mu: f64) -> usize {
        let path = format!("meshes/{name}.obj");
        self.heights.push(mesh.aabb().extents().z);
        self.meshes.insert(path.clone(), mesh);
        self.classes.push(ClassSpec { name: name.into(), mesh: path, symmetry_axis: Some([0.0, 0.0, 1.0]), mu: Some(mu) });
        self.classes.len() - 1
    }

    /// Pose of a `class` object standing at `(x, y)` on a surface at height `base`.
    fn standing(&self, class: usize, x: f64, y: f64, base: f64, yaw: f64) -> Pose6D {
        Pose6D::from_xyz_yaw(Vec3::new(x, y, base + self.heights[class] / 2.0), yaw)
    }

    fn place(&mut self, class: usize, x: f64, y: f64, base: f64, yaw: f64) -> u64 {
        let id = self.objects.len() as u64 + 1;
        let pose = self.standing(class, x, y, base, yaw);
        self.objects.push(InstanceSpec { id, class, mesh: None, pose });
        id
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        name: &str,
        seed: u64,
        trajectory: Vec<Waypoint>,
        move_events: Vec<MoveEvent>,
        detector: DetectorModel,
        category: CategoryContextModel,
        duration: f64,
    ) -> GeneratedScenario {
        let file = ScenarioFile {
            name: name.into(),
            classes: self.classes,
            object_instances: self.objects,
            environment: self.environment,
            trajectory,
            move_events,
            camera: camera(),
            detector,
            depth_noise_sigma: 0.005,
            seed,
            duration,
            frame_rate: 5.0,
            potentials: PotentialsSection { params: template_params(), category },
        };
        GeneratedScenario { file, meshes: self.meshes }
    }
}

fn look(t: f64, eye: [f64; 3], target: [f64; 3]) -> Waypoint {
    Waypoint { time: t, pose: Pose6D::look_at(Vec3::from(eye), Vec3::from(target), Vec3::z()) }
}

fn yaw<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(-PI..PI)
}

fn jitter<R: Rng>(rng: &mut R, s: f64) -> f64 {
    rng.random_range(-s..s)
}

/// Detector with mild symmetric confusion between classes `a` and `b`.
fn detector(n: usize, pairs: &[(usize, usize, f64)]) -> DetectorModel {
    let mut d = DetectorModel::with_identity(n);
    for &(a, b, p) in pairs {
        d.confusion[a][a] -= p;
        d.confusion[a][b] += p;
    }
    d.score_temperature = 0.5;
    d.p_detect_visible = 0.9;
    d.bbox_jitter_sigma = 1.0;
    d.false_positive_rate = 0.05;
    d
}

fn static_single<R: Rng>(seed: u64, rng: &mut R) -> GeneratedScenario {
    let mut b = Builder::new();
    let bin = b.class("bin", bin_mesh(), 20.0);
    let vase = b.class("vase", vase_mesh(), 4.0);
    let _table = b.class("table", table_mesh(), 1000.0);
    let (x, y) = (jitter(rng, 0.3), 2.5 + jitter(rng, 0.3));
    b.place(bin, x, y, 0.0, yaw(rng));
    let target = [x, y, 0.2];
    let trajectory = vec![look(0.0, [x - 0.8, 0.4, 1.1], target), look(12.0, [x + 0.8, 0.4, 1.1], target)];
    let det = detector(3, &[(bin, vase, 0.15), (vase, bin, 0.15)]);
    b.finish("static-single", seed, trajectory, vec![], det, CategoryContextModel::default(), 12.0)
}

fn multi_visit<R: Rng>(seed: u64, rng: &mut R) -> GeneratedScenario {
    let mut b = Builder::new();
    let bin = b.class("bin", bin_mesh(), 20.0);
    let vase = b.class("vase", vase_mesh(), 4.0);
    let table = b.class("table", table_mesh(), 1000.0);
    let t1 = (-0.7 + jitter(rng, 0.1), 2.7 + jitter(rng, 0.15));
    let t2 = (0.9 + jitter(rng, 0.1), 2.8 + jitter(rng, 0.15));
    b.place(table, t1.0, t1.1, 0.0, yaw(rng));
    b.place(table, t2.0, t2.1, 0.0, yaw(rng));
    b.place(bin, 0.1 + jitter(rng, 0.15), 2.0 + jitter(rng, 0.1), 0.0, yaw(rng));
    let v = b.place(vase, t1.0 + jitter(rng, 0.1), t1.1 + jitter(rng, 0.1), 0.6, yaw(rng));
    let moved = b.standing(vase, t2.0 + jitter(rng, 0.1), t2.1 + jitter(rng, 0.1), 0.6, yaw(rng));
    let scene = [0.1, 2.6, 0.4];
    let away = [-1.0, -3.0, 0.6];
    let trajectory = vec![
        look(0.0, [-0.9, 0.2, 1.2], scene),
        look(7.0, [1.0, 0.2, 1.2], scene),
        look(9.0, [1.0, 0.2, 1.2], away),
        look(15.0, [0.0, 0.2, 1.2], away),
        look(17.0, [0.0, 0.2, 1.2], scene),
        look(24.0, [-0.8, 0.3, 1.2], scene),
    ];
    let moves = vec![MoveEvent { time: 12.0, object: v, pose: moved }];
    let det = detector(3, &[(bin, vase, 0.15), (vase, bin, 0.15)]);
    b.finish("multi-visit", seed, trajectory, moves, det, CategoryContextModel::default(), 24.0)
}

/// Two geometrically identical bowl classes, told apart only by which
/// landmark they stand next to.
fn confusable_context<R: Rng>(seed: u64, rng: &mut R) -> GeneratedScenario {
    let mut b = Builder::new();
    let red = b.class("bowl_red", bowl_mesh(), 20.0);
    let blue = b.class("bowl_blue", bowl_mesh(), 20.0);
    let table = b.class("table", table_mesh(), 1000.0);
    let barrel = b.class("barrel", barrel_mesh(), 1000.0);
    let lt = (-0.9 + jitter(rng, 0.1), 2.9 + jitter(rng, 0.1));
    let lb = (0.9 + jitter(rng, 0.1), 2.9 + jitter(rng, 0.1));
    b.place(table, lt.0, lt.1, 0.0, yaw(rng));
    b.place(barrel, lb.0, lb.1, 0.0, yaw(rng));
    let near = 0.6;
    // Bowls in front of their landmark (towards the camera), at a random bearing.
    let a = -PI / 2.0 + jitter(rng, 0.4);
    b.place(red, lt.0 + near * a.cos(), lt.1 + near * a.sin(), 0.0, yaw(rng));
    let a = -PI / 2.0 + jitter(rng, 0.4);
    b.place(blue, lb.0 + near * a.cos(), lb.1 + near * a.sin(), 0.0, yaw(rng));
    let scene = [0.0, 2.6, 0.3];
    // The landmarks come into view first; the bowls sit below the initial frame.
    let trajectory = vec![
        look(0.0, [-0.6, -1.0, 1.8], [0.0, 2.9, 1.6]),
        look(2.0, [-0.6, -1.0, 1.8], [0.0, 2.9, 1.6]),
        look(4.0, [-0.6, -0.8, 1.4], scene),
        look(14.0, [0.6, -0.8, 1.4], scene),
    ];
    let mut det = detector(4, &[(red, blue, 0.6), (blue, red, 0.6)]);
    det.score_temperature = 0.5;
    let rel = |a, b, d| CoOccurrence { a, b, preferred_distance: d, strength: 2.0 };
    let category = CategoryContextModel {
        cooccurrence: vec![rel(red, table, near), rel(blue, barrel, near), rel(red, barrel, 2.5), rel(blue, table, 2.5)],
        ..CategoryContextModel::default()
    };
    b.finish("confusable-context", seed, trajectory, vec![], det, category, 14.0)
}

/// A table that a barrel hides from most of the later viewpoints.
fn occlusion<R: Rng>(seed: u64, rng: &mut R) -> GeneratedScenario {
    let mut b = Builder::new();
    let bin = b.class("bin", bin_mesh(), 20.0);
    let vase = b.class("vase", vase_mesh(), 4.0);
    let table = b.class("table", table_mesh(), 1000.0);
    let barrel = b.class("barrel", barrel_mesh(), 1000.0);
    let (tx, ty) = (jitter(rng, 0.1), 3.0 + jitter(rng, 0.1));
    b.place(table, tx, ty, 0.0, yaw(rng));
    // Barrel 5 cm clear of the table edge, on the camera side.
    let (bx, by) = (tx, ty - 0.35 - 0.22 - 0.05);
    b.place(barrel, bx, by, 0.0, yaw(rng));
    b.place(bin, tx - 1.1 + jitter(rng, 0.1), ty - 0.6 + jitter(rng, 0.1), 0.0, yaw(rng));
    let target = [tx, ty, 0.4];
    let occluded_eye = [bx + 0.2, by - 1.9, 1.0];
    let trajectory = vec![
        look(0.0, [tx - 1.6, 0.6, 1.0], target),
        look(6.0, [tx - 1.0, 0.6, 1.0], target),
        look(9.0, occluded_eye, target),
        look(20.0, [occluded_eye[0] + 0.05, occluded_eye[1], 1.0], target),
    ];
    let det = detector(4, &[(bin, vase, 0.15), (vase, bin, 0.15)]);
    b.finish("occlusion", seed, trajectory, vec![], det, CategoryContextModel::default(), 20.0)
}

/// A vase carried from one table to another while the camera looks away.
fn move_while_unseen<R: Rng>(seed: u64, rng: &mut R) -> GeneratedScenario {
    let mut b = Builder::new();
    let bin = b.class("bin", bin_mesh(), 20.0);
    let vase = b.class("vase", vase_mesh(), 4.0);
    let table = b.class("table", table_mesh(), 1000.0);
    let t1 = (-0.8 + jitter(rng, 0.1), 2.7 + jitter(rng, 0.15));
    let t2 = (0.8 + jitter(rng, 0.1), 2.7 + jitter(rng, 0.15));
    b.place(table, t1.0, t1.1, 0.0, yaw(rng));
    b.place(table, t2.0, t2.1, 0.0, yaw(rng));
    let v = b.place(vase, t1.0 + jitter(rng, 0.12), t1.1 + jitter(rng, 0.12), 0.6, yaw(rng));
    let moved = b.standing(vase, t2.0 + jitter(rng, 0.12), t2.1 + jitter(rng, 0.12), 0.6, yaw(rng));
    let scene = [0.0, 2.7, 0.4];
    let away = [-3.0, -2.0, 0.6];
    let trajectory = vec![
        look(0.0, [-0.3, 0.2, 1.3], scene),
        look(5.0, [0.3, 0.2, 1.3], scene),
        look(7.0, [0.3, 0.2, 1.3], away),
        look(13.0, [0.0, 0.2, 1.3], away),
        look(15.0, [0.0, 0.2, 1.3], scene),
        look(22.0, [0.3, 0.3, 1.3], scene),
    ];
    let moves = vec![MoveEvent { time: 10.0, object: v, pose: moved }];
    let det = detector(3, &[(bin, vase, 0.15), (vase, bin, 0.15)]);
    b.finish("move-while-unseen", seed, trajectory, moves, det, CategoryContextModel::default(), 22.0)
}
