//! Software depth rendering and the image-space primitives built on it.
//!
//! Rasterization samples pixel centers `(x + 0.5, y + 0.5)` and interpolates
//! `1/z` across each triangle, so stored values are camera-frame z (not ray
//! length). Triangles are clipped against the near plane before projection.

use std::io::{self, Read, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, Pose6D, TriMesh, Vec3};

/// Marker for pixels with no surface (or a sensor hole).
pub const INVALID_DEPTH: f32 = 0.0;

/// A mesh placed in the world frame.
pub type SceneItem<'a> = (&'a TriMesh, Pose6D);

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    depth: Vec<f32>,
}

impl DepthImage {
    pub fn invalid(width: u32, height: u32) -> Self {
        Self { width, height, depth: vec![INVALID_DEPTH; width as usize * height as usize] }
    }

    pub fn from_raw(width: u32, height: u32, depth: Vec<f32>) -> Option<Self> {
        (depth.len() == width as usize * height as usize).then_some(Self { width, height, depth })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.depth
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.depth
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f32> {
        let d = self.depth[(y * self.width + x) as usize];
        (d != INVALID_DEPTH && d.is_finite()).then_some(d)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, d: f32) {
        self.depth[(y * self.width + x) as usize] = d;
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d != INVALID_DEPTH && d.is_finite()).count()
    }

    /// Raster dump: ASCII header `PD\n<width> <height>\nf32le\n` followed by
    /// row-major little-endian `f32` depths (0.0 = invalid).
    pub fn write_raster<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "PD\n{} {}\nf32le\n", self.width, self.height)?;
        for d in &self.depth {
            w.write_all(&d.to_le_bytes())?;
        }
        Ok(())
    }

    /// 16-bit binary PGM with depth in millimeters (0 = invalid).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n65535\n", self.width, self.height)?;
        for &d in &self.depth {
            let mm = if d.is_finite() && d > 0.0 { (d as f64 * 1000.0).round().min(65535.0) as u16 } else { 0 };
            w.write_all(&mm.to_be_bytes())?;
        }
        Ok(())
    }

    pub fn read_raster<R: Read>(mut r: R) -> io::Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut newlines = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i);
        let (a, b, c) = match (newlines.next(), newlines.next(), newlines.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(bad("truncated header")),
        };
        if &bytes[..a] != b"PD" || &bytes[b + 1..c] != b"f32le" {
            return Err(bad("not a PD/f32le raster"));
        }
        let dims = std::str::from_utf8(&bytes[a + 1..b]).map_err(|_| bad("bad dimensions"))?;
        let mut it = dims.split_whitespace().map(str::parse::<u32>);
        let (width, height) = match (it.next(), it.next()) {
            (Some(Ok(w)), Some(Ok(h))) => (w, h),
            _ => return Err(bad("bad dimensions")),
        };
        let body = &bytes[c + 1..];
        if body.len() != 4 * width as usize * height as usize {
            return Err(bad("payload size does not match dimensions"));
        }
        let depth = body.chunks_exact(4).map(|ch| f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]])).collect();
        Ok(Self { width, height, depth })
    }
}

/// Axis-aligned image rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox2D {
    /// Box clipped to `[0, width] × [0, height]`; corners are reordered if given
    /// reversed.
    pub fn clipped(x0: f64, y0: f64, x1: f64, y1: f64, width: u32, height: u32) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self {
            x_min: x0.min(x1).clamp(0.0, w),
            y_min: y0.min(y1).clamp(0.0, h),
            x_max: x0.max(x1).clamp(0.0, w),
            y_max: y0.max(y1).clamp(0.0, h),
        }
    }

    /// Unclipped box; used for detector output and tests.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min: x_min.min(x_max), y_min: y_min.min(y_max), x_max: x_min.max(x_max), y_max: y_min.max(y_max) }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BBox2D) -> BBox2D {
        BBox2D {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn intersection_area(&self, other: &BBox2D) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox2D) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Same box scaled about its center.
    pub fn scaled(&self, s: f64) -> BBox2D {
        let c = self.center();
        let (hw, hh) = (self.width() * s / 2.0, self.height() * s / 2.0);
        BBox2D { x_min: c.x - hw, y_min: c.y - hh, x_max: c.x + hw, y_max: c.y + hh }
    }

    /// Inclusive-exclusive pixel index ranges whose centers fall in the box,
    /// clamped to the image.
    pub fn pixel_rect(&self, width: u32, height: u32) -> PixelRect {
        let x0 = (self.x_min - 0.5).ceil().max(0.0) as i64;
        let y0 = (self.y_min - 0.5).ceil().max(0.0) as i64;
        let x1 = ((self.x_max - 0.5).floor() as i64 + 1).min(width as i64);
        let y1 = ((self.y_max - 0.5).floor() as i64 + 1).min(height as i64);
        PixelRect {
            x0: x0.clamp(0, width as i64) as u32,
            y0: y0.clamp(0, height as i64) as u32,
            x1: x1.max(x0).clamp(0, width as i64) as u32,
            y1: y1.max(y0).clamp(0, height as i64) as u32,
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn full(camera: &CameraModel) -> Self {
        Self { x0: 0, y0: 0, x1: camera.width, y1: camera.height }
    }

    pub fn count(&self) -> usize {
        (self.x1.saturating_sub(self.x0)) as usize * (self.y1.saturating_sub(self.y0)) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    fn width(&self) -> u32 {
        self.x1 - self.x0
    }
}

/// Depth buffer covering a sub-rectangle of the image.
#[derive(Debug, Clone)]
pub struct DepthPatch {
    pub rect: PixelRect,
    depth: Vec<f32>,
}

impl DepthPatch {
    pub fn new(rect: PixelRect) -> Self {
        Self { rect, depth: vec![INVALID_DEPTH; rect.count()] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f32> {
        let d = self.depth[((y - self.rect.y0) * self.rect.width() + (x - self.rect.x0)) as usize];
        (d != INVALID_DEPTH).then_some(d)
    }

    pub fn covered(&self) -> usize {
        self.depth.iter().filter(|&&d| d != INVALID_DEPTH).count()
    }

    #[inline]
    fn test_and_set(&mut self, x: u32, y: u32, z: f32) {
        let idx = ((y - self.rect.y0) * self.rect.width() + (x - self.rect.x0)) as usize;
        let cur = self.depth[idx];
        if cur == INVALID_DEPTH || z < cur {
            self.depth[idx] = z;
        }
    }

    pub fn into_image(self, camera: &CameraModel) -> DepthImage {
        if self.rect == PixelRect::full(camera) {
            return DepthImage { width: camera.width, height: camera.height, depth: self.depth };
        }
        let mut img = DepthImage::invalid(camera.width, camera.height);
        for y in self.rect.y0..self.rect.y1 {
            for x in self.rect.x0..self.rect.x1 {
                if let Some(d) = self.get(x, y) {
                    img.set(x, y, d);
                }
            }
        }
        img
    }
}

/// Screen-space vertex: pixel position and inverse depth.
#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_z: f64,
}

/// Clips a camera-frame triangle against `z >= near`. Returns the clipped
/// polygon (0, 3 or 4 vertices).
fn clip_near(tri: [Vec3; 3], near: f64, out: &mut Vec<Vec3>) {
    out.clear();
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= near;
        let b_in = b.z >= near;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (near - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = near;
            out.push(p);
        }
    }
}

fn rasterize_triangle(v: [ScreenVertex; 3], patch: &mut DepthPatch, far: f64) {
    let area = (v[1].x - v[0].x) * (v[2].y - v[0].y) - (v[2].x - v[0].x) * (v[1].y - v[0].y);
    if area.abs() < 1e-12 {
        return;
    }
    let r = patch.rect;
    let min_x = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let x0 = ((min_x - 0.5).ceil().max(r.x0 as f64)) as i64;
    let x1 = ((max_x - 0.5).floor().min(r.x1 as f64 - 1.0)) as i64;
    let y0 = ((min_y - 0.5).ceil().max(r.y0 as f64)) as i64;
    let y1 = ((max_y - 0.5).floor().min(r.y1 as f64 - 1.0)) as i64;
    if x0 > x1 || y0 > y1 {
        return;
    }
    let inv_area = 1.0 / area;
    let edge = |a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64| (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
    for y in y0..=y1 {
        let py = y as f64 + 0.5;
        for x in x0..=x1 {
            let px = x as f64 + 0.5;
            let w0 = edge(&v[1], &v[2], px, py) * inv_area;
            let w1 = edge(&v[2], &v[0], px, py) * inv_area;
            let w2 = edge(&v[0], &v[1], px, py) * inv_area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let inv_z = w0 * v[0].inv_z + w1 * v[1].inv_z + w2 * v[2].inv_z;
            if inv_z <= 0.0 {
                continue;
            }
            let z = 1.0 / inv_z;
            if z > far {
                continue;
            }
            patch.test_and_set(x as u32, y as u32, z as f32);
        }
    }
}

/// Rasterizes one posed mesh into `patch`. `world_to_cam` maps world points
/// into the camera frame.
pub fn rasterize_mesh(
    mesh: &TriMesh,
    pose: &Pose6D,
    world_to_cam: &Pose6D,
    camera: &CameraModel,
    patch: &mut DepthPatch,
) {
    if patch.rect.is_empty() {
        return;
    }
    let model_to_cam = world_to_cam.compose(pose);
    let cam_verts: Vec<Vec3> = mesh.vertices().iter().map(|v| model_to_cam.transform_point(v)).collect();
    let mut poly = Vec::with_capacity(4);
    for tri in mesh.triangles() {
        let t = [cam_verts[tri[0] as usize], cam_verts[tri[1] as usize], cam_verts[tri[2] as usize]];
        if t.iter().all(|p| p.z < camera.near) || t.iter().all(|p| p.z > camera.far) {
            continue;
        }
        clip_near(t, camera.near, &mut poly);
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = poly
            .iter()
            .map(|p| ScreenVertex {
                x: camera.fx * p.x / p.z + camera.cx,
                y: camera.fy * p.y / p.z + camera.cy,
                inv_z: 1.0 / p.z,
            })
            .collect();
        for k in 1..screen.len() - 1 {
            rasterize_triangle([screen[0], screen[k], screen[k + 1]], patch, camera.far);
        }
    }
}

/// Renders items restricted to `rect`; pixels outside stay untouched.
pub fn render_patch(items: &[SceneItem<'_>], camera: &CameraModel, camera_pose: &Pose6D, rect: PixelRect) -> DepthPatch {
    let world_to_cam = camera_pose.inverse();
    let mut patch = DepthPatch::new(rect);
    for (mesh, pose) in items {
        rasterize_mesh(mesh, pose, &world_to_cam, camera, &mut patch);
    }
    patch
}

/// Nearest-surface depth image of `items` (world frame) seen from `camera_pose`.
pub fn render_depth(items: &[SceneItem<'_>], camera: &CameraModel, camera_pose: &Pose6D) -> DepthImage {
    render_patch(items, camera, camera_pose, PixelRect::full(camera)).into_image(camera)
}

/// Minimum enclosing box of the projected mesh, clipped to the image; `None`
/// when the mesh is entirely behind the camera or the clipped box is empty.
pub fn project_bbox(mesh: &TriMesh, pose: &Pose6D, camera: &CameraModel, camera_pose: &Pose6D) -> Option<BBox2D> {
    let model_to_cam = camera_pose.inverse().compose(pose);
    let cam_verts: Vec<Vec3> = mesh.vertices().iter().map(|v| model_to_cam.transform_point(v)).collect();
    let mut min = Vector2::repeat(f64::INFINITY);
    let mut max = Vector2::repeat(f64::NEG_INFINITY);
    let mut extend = |p: &Vec3| {
        let px = Vector2::new(camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy);
        min = min.inf(&px);
        max = max.sup(&px);
    };
    if cam_verts.iter().all(|p| p.z >= camera.near) {
        cam_verts.iter().for_each(&mut extend);
    } else if cam_verts.iter().all(|p| p.z < camera.near) {
        return None;
    } else {
        let mut poly = Vec::with_capacity(4);
        for tri in mesh.triangles() {
            let t = [cam_verts[tri[0] as usize], cam_verts[tri[1] as usize], cam_verts[tri[2] as usize]];
            clip_near(t, camera.near, &mut poly);
            poly.iter().for_each(&mut extend);
        }
        if !min.x.is_finite() {
            return None;
        }
    }
    let b = BBox2D::clipped(min.x, min.y, max.x, max.y, camera.width, camera.height);
    (!b.is_empty()).then_some(b)
}

/// True when some corner of the mesh's local bounding box, posed, lies inside
/// the image with depth in `[near, far]`.
pub fn in_frustum(mesh: &TriMesh, pose: &Pose6D, camera: &CameraModel, camera_pose: &Pose6D) -> bool {
    let model_to_cam = camera_pose.inverse().compose(pose);
    mesh.aabb().corners().iter().any(|c| {
        let p = model_to_cam.transform_point(c);
        p.z <= camera.far
            && camera.project_point(&p).pixel().is_some_and(|px| camera.contains_pixel(&px))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visibility {
    pub in_frustum: bool,
    pub visible_fraction: f64,
}

/// Fraction of the object's own rendered pixels that survive in the full
/// scene render (within `tolerance` meters).
pub fn visibility(
    mesh: &TriMesh,
    pose: &Pose6D,
    full_scene: &[SceneItem<'_>],
    camera: &CameraModel,
    camera_pose: &Pose6D,
    tolerance: f64,
) -> Visibility {
    let in_frustum = in_frustum(mesh, pose, camera, camera_pose);
    let Some(bbox) = project_bbox(mesh, pose, camera, camera_pose) else {
        return Visibility { in_frustum, visible_fraction: 0.0 };
    };
    let rect = bbox.pixel_rect(camera.width, camera.height);
    let alone = render_patch(&[(mesh, *pose)], camera, camera_pose, rect);
    let scene = render_patch(full_scene, camera, camera_pose, rect);
    visible_fraction_from_patches(&alone, &scene, tolerance, in_frustum)
}

/// Same as [`visibility`] with the full-scene render already available.
pub fn visibility_against(
    mesh: &TriMesh,
    pose: &Pose6D,
    scene_depth: &DepthImage,
    camera: &CameraModel,
    camera_pose: &Pose6D,
    tolerance: f64,
) -> Visibility {
    let in_frustum = in_frustum(mesh, pose, camera, camera_pose);
    let Some(bbox) = project_bbox(mesh, pose, camera, camera_pose) else {
        return Visibility { in_frustum, visible_fraction: 0.0 };
    };
    let rect = bbox.pixel_rect(camera.width, camera.height);
    let alone = render_patch(&[(mesh, *pose)], camera, camera_pose, rect);
    let (mut covered, mut visible) = (0usize, 0usize);
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            if let Some(d) = alone.get(x, y) {
                covered += 1;
                if scene_depth.get(x, y).is_some_and(|s| (s - d).abs() as f64 <= tolerance) {
                    visible += 1;
                }
            }
        }
    }
    let visible_fraction = if covered == 0 { 0.0 } else { visible as f64 / covered as f64 };
    Visibility { in_frustum, visible_fraction }
}

fn visible_fraction_from_patches(alone: &DepthPatch, scene: &DepthPatch, tolerance: f64, in_frustum: bool) -> Visibility {
    let r = alone.rect;
    let (mut covered, mut visible) = (0usize, 0usize);
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            if let Some(d) = alone.get(x, y) {
                covered += 1;
                if scene.get(x, y).is_some_and(|s| (s - d).abs() as f64 <= tolerance) {
                    visible += 1;
                }
            }
        }
    }
    let visible_fraction = if covered == 0 { 0.0 } else { visible as f64 / covered as f64 };
    Visibility { in_frustum, visible_fraction }
}

/// Knobs of the depth discrepancy behind [`depth_similarity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    /// Substitute for `d` (m²) when too few pixels are jointly valid.
    pub d_max: f64,
    /// Minimum jointly valid fraction of ROI pixels.
    pub min_valid_fraction: f64,
    /// Per-pixel depth differences are clamped to this magnitude (m) when set.
    pub max_diff: Option<f64>,
    /// Projections whose clipped box is narrower than this (pixels) on either
    /// side carry no usable depth evidence.
    pub min_extent_px: f64,
}

impl SimilarityConfig {
    fn clamp_sq(&self, diff: f64) -> f64 {
        let d = match self.max_diff {
            Some(m) => diff.abs().min(m),
            None => diff,
        };
        d * d
    }
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { d_max: 1.0, min_valid_fraction: 0.05, max_diff: None, min_extent_px: 0.0 }
    }
}

/// Mean squared depth difference (m²) between the rendered hypothesis and the
/// observation over ROI pixels valid in both, or `d_max` when that overlap is
/// sparse.
pub fn depth_discrepancy(
    hypothesis: (&TriMesh, &Pose6D),
    camera: &CameraModel,
    camera_pose: &Pose6D,
    observed: &DepthImage,
    roi: &BBox2D,
    config: &SimilarityConfig,
) -> f64 {
    let rect = roi.pixel_rect(camera.width, camera.height);
    if rect.is_empty() {
        return config.d_max;
    }
    let rendered = render_patch(&[(hypothesis.0, *hypothesis.1)], camera, camera_pose, rect);
    let (mut n, mut sum) = (0usize, 0.0f64);
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            if let (Some(r), Some(o)) = (rendered.get(x, y), observed.get(x, y)) {
                let diff = r as f64 - o as f64;
                sum += config.clamp_sq(diff);
                n += 1;
            }
        }
    }
    if n == 0 || (n as f64) < config.min_valid_fraction * rect.count() as f64 {
        config.d_max
    } else {
        sum / n as f64
    }
}

/// Believed surroundings of a hypothesis: the other tracked objects, which
/// may hide it, and the static structure, which only shows where the
/// hypothesis is absent.
#[derive(Debug, Clone, Copy)]
pub struct Surroundings<'a> {
    pub objects: &'a DepthImage,
    pub structure: &'a DepthImage,
}

/// As [`depth_discrepancy`], with the hypothesis composited into its
/// surroundings. Pixels where another object is the nearest believed surface
/// are skipped; ROI pixels the hypothesis leaves uncovered compare the static
/// structure. A hypothesis with no visible pixel gets `d_max`.
pub fn depth_discrepancy_in_scene(
    hypothesis: (&TriMesh, &Pose6D),
    camera: &CameraModel,
    camera_pose: &Pose6D,
    observed: &DepthImage,
    surroundings: &Surroundings<'_>,
    roi: &BBox2D,
    config: &SimilarityConfig,
) -> f64 {
    let rect = roi.pixel_rect(camera.width, camera.height);
    if rect.is_empty() {
        return config.d_max;
    }
    let rendered = render_patch(&[(hypothesis.0, *hypothesis.1)], camera, camera_pose, rect);
    let (mut n, mut sum, mut visible) = (0usize, 0.0f64, 0usize);
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let composite = match (rendered.get(x, y), surroundings.objects.get(x, y)) {
                (Some(r), Some(o)) if (o as f64) < r as f64 - OCCLUSION_MARGIN => continue,
                (Some(r), _) => {
                    visible += 1;
                    r
                }
                (None, Some(_)) => continue,
                (None, None) => match surroundings.structure.get(x, y) {
                    Some(b) => b,
                    None => continue,
                },
            };
            if let Some(o) = observed.get(x, y) {
                let diff = composite as f64 - o as f64;
                sum += config.clamp_sq(diff);
                n += 1;
            }
        }
    }
    if visible == 0 || n == 0 || (n as f64) < config.min_valid_fraction * rect.count() as f64 {
        config.d_max
    } else {
        sum / n as f64
    }
}

/// Depth (m) by which an occluder must be nearer to hide a hypothesis pixel.
pub const OCCLUSION_MARGIN: f64 = 0.01;

/// `exp(-λ·d)` with `d` from [`depth_discrepancy`].
pub fn depth_similarity(
    hypothesis: (&TriMesh, &Pose6D),
    camera: &CameraModel,
    camera_pose: &Pose6D,
    observed: &DepthImage,
    roi: &BBox2D,
    lambda: f64,
    config: &SimilarityConfig,
) -> f64 {
    (-lambda * depth_discrepancy(hypothesis, camera, camera_pose, observed, roi, config)).exp()
}
