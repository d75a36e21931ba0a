//! Runs, benchmarks and scenario generation behind the `ctmap` binary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{error, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{icp_register, raw_detector_eval, tmap_config, IcpConfig};
use crate::eval::{
    assign_tracks, benchmark_report, is_correct, map_score, write_csv, GroundTruthBox, LabeledBox, PoseAccuracySpec, PoseCase, DEFAULT_DT_GRID,
};
use crate::geometry::{Pose6D, Vec3};
use crate::inference::{filter_step, Belief, BeliefSnapshot, FilterConfig, InferenceModel, InitOrientation, MapEntry, StepReport};
use crate::render::{self, BBox2D, DepthImage};
use crate::simworld::{load_scenario, FrameTruth, Observation, Scenario, ScenarioError, VISIBILITY_TOLERANCE};
use crate::templates;

/// Minimum visible fraction for an object to count as seen in a frame.
pub const SEEN_FRACTION: f64 = 0.1;
pub const MAP_IOU: f64 = 0.5;
/// Surface samples of the class mesh used as the ICP model cloud.
pub const ICP_MODEL_POINTS: usize = 500;
/// Rotation thresholds reported by runs and benchmarks: the default grid plus
/// the 15° headline threshold.
pub const REPORT_DTHETA_GRID_DEG: [f64; 4] = [10.0, 15.0, 20.0, 30.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ctmap,
    Tmap,
    Raw,
    Icp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ctmap, Method::Tmap, Method::Raw, Method::Icp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ctmap => "ctmap",
            Method::Tmap => "tmap",
            Method::Raw => "raw",
            Method::Icp => "icp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("unknown method '{0}'; expected one of ctmap, tmap, raw, icp")]
pub struct UnknownMethod(String);

impl FromStr for Method {
    type Err = UnknownMethod;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub method: Method,
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Write every n-th snapshot (the last frame is always written).
    pub snapshot_every: usize,
    pub particles: Option<usize>,
    pub workers: Option<usize>,
    pub dump_depth: bool,
}

impl RunConfig {
    pub fn new(scenario: impl Into<PathBuf>, method: Method, out: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            method,
            seed: None,
            out: out.into(),
            snapshot_every: 1,
            particles: None,
            workers: None,
            dump_depth: false,
        }
    }
}

/// Simulated observations and ground truth of every frame.
#[derive(Debug, Clone)]
pub struct Episode {
    pub observations: Vec<Observation>,
    pub truths: Vec<FrameTruth>,
}

pub fn simulate(scenario: &Scenario) -> Result<Episode, ScenarioError> {
    let frames: Result<Vec<_>, _> = (0..scenario.frame_count()).into_par_iter().map(|f| scenario.observe_frame(f)).collect();
    let (observations, truths) = frames?.into_iter().unzip();
    Ok(Episode { observations, truths })
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    /// One snapshot per frame.
    pub snapshots: Vec<BeliefSnapshot>,
    /// `(track id, ground-truth object that started it)` of the final active tracks.
    pub track_sources: Vec<(u64, Option<u64>)>,
    pub reports: Vec<StepReport>,
    pub degeneracy_events: usize,
}

impl FilterRun {
    pub fn final_map(&self) -> &[MapEntry] {
        self.snapshots.last().map(|s| s.objects.as_slice()).unwrap_or(&[])
    }

    /// Estimate of the track assigned to `object` at `frame`.
    pub fn estimate_at(&self, object: u64, frame: usize) -> Option<&MapEntry> {
        let track = *assign_tracks(&self.track_sources).get(&object)?;
        self.snapshots.get(frame)?.objects.iter().find(|e| e.id == track)
    }
}

fn filter_seed(scenario_seed: u64) -> u64 {
    scenario_seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Runs the particle filter over an episode; `context` selects CT-Map or T-Map.
pub fn run_filter(scenario: &Scenario, episode: &Episode, context: bool, particles: Option<usize>) -> FilterRun {
    let mut config = FilterConfig { init_orientation: InitOrientation::UprightYaw, border_margin_px: 2.0, ..FilterConfig::default() };
    if let Some(m) = particles {
        config.particles = m;
    }
    let mut model = InferenceModel::from_scenario(scenario, config);
    if !context {
        model.params = tmap_config(&model.params);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(filter_seed(scenario.seed));
    let mut belief = Belief::default();
    let mut snapshots = Vec::with_capacity(episode.observations.len());
    let mut reports = Vec::with_capacity(episode.observations.len());
    for obs in &episode.observations {
        reports.push(filter_step(&mut belief, obs, &model, &mut rng));
        snapshots.push(belief.snapshot());
    }
    let track_sources = belief.active().map(|t| (t.id, t.source)).collect();
    FilterRun { snapshots, track_sources, reports, degeneracy_events: belief.degeneracy_events }
}

/// Ground-truth boxes of every object seen in each frame.
pub fn ground_truth_boxes(episode: &Episode) -> Vec<GroundTruthBox> {
    episode
        .truths
        .iter()
        .flat_map(|t| {
            t.objects.iter().filter(|o| o.in_frustum && o.visible_fraction >= SEEN_FRACTION).filter_map(move |o| {
                o.bbox.map(|bbox| GroundTruthBox { frame: t.frame, class: o.class, bbox })
            })
        })
        .collect()
}

/// Final map estimates projected onto every frame, kept where the estimate
/// is visible in the rendered estimated scene.
pub fn reproject_map(scenario: &Scenario, episode: &Episode, map: &[MapEntry]) -> Vec<LabeledBox> {
    let meshes: Vec<_> = map.iter().map(|e| scenario.class_mesh(e.class)).collect();
    episode
        .truths
        .par_iter()
        .flat_map_iter(|truth| {
            let mut items = scenario.environment_items();
            items.extend(map.iter().zip(&meshes).map(|(e, m)| (*m, e.pose)));
            let depth = render::render_depth(&items, &scenario.camera, &truth.camera_pose);
            let mut boxes = Vec::new();
            for (e, mesh) in map.iter().zip(&meshes) {
                let vis = render::visibility_against(mesh, &e.pose, &depth, &scenario.camera, &truth.camera_pose, VISIBILITY_TOLERANCE);
                if !vis.in_frustum || vis.visible_fraction < SEEN_FRACTION {
                    continue;
                }
                if let Some(bbox) = render::project_bbox(mesh, &e.pose, &scenario.camera, &truth.camera_pose) {
                    boxes.push(LabeledBox { frame: truth.frame, class: e.class, bbox, confidence: e.confidence });
                }
            }
            boxes
        })
        .collect()
}

/// Last frame in which each object is seen, with its pose and box there.
pub fn last_seen(episode: &Episode) -> BTreeMap<u64, (usize, usize, Pose6D, BBox2D)> {
    let mut out = BTreeMap::new();
    for t in &episode.truths {
        for o in &t.objects {
            if o.in_frustum && o.visible_fraction >= SEEN_FRACTION {
                if let Some(b) = o.bbox {
                    out.insert(o.id, (t.frame, o.class, o.pose, b));
                }
            }
        }
    }
    out
}

/// Filter estimates at each object's last-seen frame.
pub fn filter_pose_cases(episode: &Episode, run: &FilterRun) -> Vec<PoseCase> {
    last_seen(episode)
        .into_iter()
        .map(|(id, (frame, class, truth, _))| PoseCase {
            class,
            truth,
            estimate: run.estimate_at(id, frame).map(|e| (e.class, e.pose)),
        })
        .collect()
}

/// World points of the valid depth pixels inside `bbox`.
pub fn crop_points(depth: &DepthImage, scenario: &Scenario, camera_pose: &Pose6D, bbox: &BBox2D) -> Vec<Vec3> {
    let r = bbox.pixel_rect(depth.width(), depth.height());
    let mut pts = Vec::with_capacity(r.count());
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            if let Some(z) = depth.get(x, y) {
                let p = scenario.camera.back_project(x as f64 + 0.5, y as f64 + 0.5, z as f64);
                pts.push(camera_pose.transform_point(&p));
            }
        }
    }
    pts
}

/// ICP on the ground-truth crop at each object's last-seen frame, starting
/// from the back-projected box center with identity rotation.
pub fn icp_pose_cases(scenario: &Scenario, episode: &Episode) -> Vec<PoseCase> {
    let config = IcpConfig::default();
    last_seen(episode)
        .into_par_iter()
        .map(|(id, (frame, class, truth, bbox))| {
            let obs = &episode.observations[frame];
            let observed = crop_points(&obs.depth, scenario, &obs.robot_pose, &bbox);
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed.wrapping_add(id));
            let model = scenario.class_mesh(class).sample_surface(ICP_MODEL_POINTS, &mut rng);
            let estimate = center_depth(&obs.depth, &bbox).and_then(|z| {
                let c = bbox.center();
                let start = obs.robot_pose.transform_point(&scenario.camera.back_project(c.x, c.y, z));
                match icp_register(&model, &observed, Pose6D::from_translation(start), &config) {
                    Ok(r) => Some((class, r.pose)),
                    Err(e) => {
                        warn!("icp on object {id}: {e}");
                        None
                    }
                }
            });
            PoseCase { class, truth, estimate }
        })
        .collect()
}

/// Median valid depth in the central quarter of the box.
fn center_depth(depth: &DepthImage, bbox: &BBox2D) -> Option<f64> {
    let r = bbox.scaled(0.5).pixel_rect(depth.width(), depth.height());
    let mut zs: Vec<f32> = (r.y0..r.y1).flat_map(|y| (r.x0..r.x1).filter_map(move |x| depth.get(x, y))).collect();
    if zs.is_empty() {
        return None;
    }
    zs.sort_by(f32::total_cmp);
    Some(zs[zs.len() / 2] as f64)
}

/// Metrics of one method on one scenario.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    /// `None` for ICP, which produces no detections.
    pub map: Option<f64>,
    pub pose_cases: Vec<PoseCase>,
    pub filter: Option<FilterRun>,
}

pub fn run_method(scenario: &Scenario, episode: &Episode, method: Method, particles: Option<usize>) -> MethodResult {
    let truth_boxes = ground_truth_boxes(episode);
    match method {
        Method::Ctmap | Method::Tmap => {
            let run = run_filter(scenario, episode, method == Method::Ctmap, particles);
            let boxes = reproject_map(scenario, episode, run.final_map());
            MethodResult {
                method,
                map: Some(map_score(&boxes, &truth_boxes, MAP_IOU)),
                pose_cases: filter_pose_cases(episode, &run),
                filter: Some(run),
            }
        }
        Method::Raw => {
            let stream: Vec<_> = episode.observations.iter().map(|o| (o.frame, o.detections.clone())).collect();
            let boxes = raw_detector_eval(&stream);
            MethodResult { method, map: Some(map_score(&boxes, &truth_boxes, MAP_IOU)), pose_cases: vec![], filter: None }
        }
        Method::Icp => MethodResult { method, map: None, pose_cases: icp_pose_cases(scenario, episode), filter: None },
    }
}

/// One line of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub method: String,
    pub metric: String,
    pub dt: Option<f64>,
    pub dtheta_deg: Option<f64>,
    pub value: f64,
}

/// Per-class symmetry axes.
type Symmetry = Vec<Option<nalgebra::Unit<Vec3>>>;

fn symmetry(scenario: &Scenario) -> Symmetry {
    scenario.classes.iter().map(|c| c.symmetry_axis).collect()
}

pub fn metric_rows(scenario_name: &str, result: &MethodResult, symmetry: &[Option<nalgebra::Unit<Vec3>>]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    let method = result.method.name().to_string();
    if let Some(map) = result.map {
        rows.push(MetricRow {
            scenario: scenario_name.into(),
            method: method.clone(),
            metric: "map".into(),
            dt: None,
            dtheta_deg: None,
            value: map,
        });
    }
    if !result.pose_cases.is_empty() {
        let runs = [(method.clone(), result.pose_cases.clone())];
        for r in benchmark_report(&runs, symmetry, &DEFAULT_DT_GRID, &REPORT_DTHETA_GRID_DEG) {
            rows.push(MetricRow {
                scenario: scenario_name.into(),
                method: method.clone(),
                metric: "pose_accuracy".into(),
                dt: Some(r.dt),
                dtheta_deg: Some(r.dtheta_deg),
                value: r.accuracy,
            });
        }
    }
    rows
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad pattern: {0}")]
    Pattern(#[from] glob::PatternError),
    #[error("no scenario matches {0}")]
    NoScenarios(String),
    #[error("{0}")]
    Ordering(String),
    #[error(transparent)]
    Template(#[from] templates::UnknownTemplate),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    /// 2 for unusable inputs, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) | CliError::Pattern(_) | CliError::NoScenarios(_) | CliError::Template(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
    let mut s = load_scenario(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    method: &'a str,
    seed: u64,
    frames: usize,
    map: Option<f64>,
    pose_accuracy: Vec<MetricRow>,
}

/// Writes snapshots (`snapshots.jsonl`), the final map (`final_map.json`)
/// and `metrics.json`/`metrics.csv` into `config.out`.
pub fn run(config: &RunConfig) -> Result<MethodResult, CliError> {
    let scenario = load(&config.scenario, config.seed)?;
    let out = &config.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let (episode, result) = with_workers(config.workers, || -> Result<_, CliError> {
        let episode = simulate(&scenario)?;
        let result = run_method(&scenario, &episode, config.method, config.particles);
        Ok((episode, result))
    })??;
    info!("{} on {}: {} frames", config.method, scenario.name, episode.observations.len());

    if let Some(run) = &result.filter {
        let path = out.join("snapshots.jsonl");
        let mut w = create(&path)?;
        let every = config.snapshot_every.max(1);
        let last = run.snapshots.len().saturating_sub(1);
        for (i, s) in run.snapshots.iter().enumerate() {
            if i % every == 0 || i == last {
                writeln!(w, "{}", s.to_json()).map_err(io_err(&path))?;
            }
        }
        w.flush().map_err(io_err(&path))?;
        let path = out.join("final_map.json");
        let text = serde_json::to_string_pretty(run.final_map()).expect("map serializes");
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    if config.dump_depth {
        let dir = out.join("depth");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for obs in &episode.observations {
            let path = dir.join(format!("frame_{:05}.pgm", obs.frame));
            let mut w = create(&path)?;
            obs.depth.write_pgm(&mut w).map_err(io_err(&path))?;
        }
    }
    let rows = metric_rows(&scenario.name, &result, &symmetry(&scenario));
    let path = out.join("metrics.csv");
    write_csv(&rows, create(&path)?)?;
    let summary = RunSummary {
        scenario: &scenario.name,
        method: config.method.name(),
        seed: scenario.seed,
        frames: episode.observations.len(),
        map: result.map,
        pose_accuracy: rows.into_iter().filter(|r| r.metric == "pose_accuracy").collect(),
    };
    let path = out.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(io_err(&path))?;
    Ok(result)
}

pub fn cmd_run(config: &RunConfig) -> i32 {
    match run(config) {
        Ok(_) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub scenarios: String,
    pub methods: Vec<Method>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub workers: Option<usize>,
    pub assert_ordering: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub scenarios: Vec<String>,
    /// Mean mAP per method over the scenarios that ran.
    pub mean_map: BTreeMap<String, f64>,
    /// Pooled pose accuracy per method over the default threshold grid.
    pub pose_accuracy: Vec<MetricRow>,
    pub failures: Vec<String>,
}

/// Runs every method on every scenario matching the glob and writes
/// `benchmark.csv` and `benchmark.json`.
pub fn benchmark(config: &BenchmarkConfig) -> Result<BenchmarkSummary, CliError> {
    let mut paths: Vec<PathBuf> = glob::glob(&config.scenarios)?.filter_map(Result::ok).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::NoScenarios(config.scenarios.clone()));
    }
    fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;

    type Cell = Result<(String, Symmetry, Vec<MethodResult>), String>;
    let cells: Vec<Cell> = with_workers(config.workers, || {
        paths
            .par_iter()
            .map(|path| {
                let scenario = load(path, config.seed).map_err(|e| format!("{}: {e}", path.display()))?;
                let episode = simulate(&scenario).map_err(|e| format!("{}: {e}", path.display()))?;
                let results =
                    config.methods.iter().map(|&m| run_method(&scenario, &episode, m, config.particles)).collect();
                Ok((scenario.name.clone(), symmetry(&scenario), results))
            })
            .collect()
    })?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut names = Vec::new();
    let mut maps: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    let mut pooled: BTreeMap<Method, Vec<(PoseCase, Symmetry)>> = BTreeMap::new();
    for (cell, path) in cells.into_iter().zip(&paths) {
        match cell {
            Ok((name, sym, results)) => {
                for r in &results {
                    rows.extend(metric_rows(&name, r, &sym));
                    if let Some(m) = r.map {
                        maps.entry(r.method).or_default().push(m);
                    }
                    pooled.entry(r.method).or_default().extend(r.pose_cases.iter().map(|c| (*c, sym.clone())));
                }
                names.push(format!("{} ({})", name, path.display()));
            }
            Err(e) => {
                error!("{e}");
                failures.push(e);
            }
        }
    }
    let mean_map: BTreeMap<String, f64> =
        maps.iter().map(|(m, v)| (m.name().to_string(), v.iter().sum::<f64>() / v.len() as f64)).collect();
    let mut pose_accuracy = Vec::new();
    for (m, cases) in &pooled {
        if cases.is_empty() {
            continue;
        }
        for &dt in &DEFAULT_DT_GRID {
            for &deg in &REPORT_DTHETA_GRID_DEG {
                let correct = cases
                    .iter()
                    .filter(|(c, sym)| is_correct(c, &PoseAccuracySpec { dt, dtheta: deg.to_radians(), symmetry: sym.clone() }))
                    .count();
                pose_accuracy.push(MetricRow {
                    scenario: "ALL".into(),
                    method: m.name().to_string(),
                    metric: "pose_accuracy".into(),
                    dt: Some(dt),
                    dtheta_deg: Some(deg),
                    value: correct as f64 / cases.len() as f64,
                });
            }
        }
    }
    for (m, v) in &mean_map {
        rows.push(MetricRow {
            scenario: "ALL".into(),
            method: m.clone(),
            metric: "map".into(),
            dt: None,
            dtheta_deg: None,
            value: *v,
        });
    }
    rows.extend(pose_accuracy.iter().cloned());
    write_csv(&rows, create(&config.out.join("benchmark.csv"))?)?;
    let summary = BenchmarkSummary { scenarios: names, mean_map, pose_accuracy, failures };
    let path = config.out.join("benchmark.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(io_err(&path))?;
    Ok(summary)
}

/// Checks mAP(ctmap) > mAP(tmap) > mAP(raw) for the methods present.
pub fn check_ordering(mean_map: &BTreeMap<String, f64>) -> Result<(), String> {
    let order = ["ctmap", "tmap", "raw"];
    let present: Vec<(&str, f64)> = order.iter().filter_map(|m| mean_map.get(*m).map(|v| (*m, *v))).collect();
    for w in present.windows(2) {
        if w[0].1 <= w[1].1 {
            return Err(format!("ordering violated: mAP({}) = {:.4} <= mAP({}) = {:.4}", w[0].0, w[0].1, w[1].0, w[1].1));
        }
    }
    Ok(())
}

pub fn cmd_benchmark(config: &BenchmarkConfig) -> i32 {
    let summary = match benchmark(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    for (m, v) in &summary.mean_map {
        println!("mAP {m}: {v:.4}");
    }
    let mut code = 0;
    if !summary.failures.is_empty() {
        for f in &summary.failures {
            eprintln!("failed: {f}");
        }
        code = 1;
    }
    if config.assert_ordering {
        if let Err(msg) = check_ordering(&summary.mean_map) {
            eprintln!("error: {msg}");
            code = 1;
        }
    }
    code
}

/// Writes `<out>/<template>.json` and its meshes; returns the JSON path.
pub fn gen_scenario(template: &str, seed: u64, out: &Path) -> Result<PathBuf, CliError> {
    let g = templates::generate(template, seed)?;
    g.write_to(out, template).map_err(io_err(out))
}

pub fn cmd_gen_scenario(template: &str, seed: u64, out: &Path) -> i32 {
    match gen_scenario(template, seed, out) {
        Ok(path) => {
            println!("{}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
