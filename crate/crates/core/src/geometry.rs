//! Rigid poses, triangle meshes, the pinhole camera and the handful of
//! geometric queries shared by rendering, simulation and the potentials.

use std::fmt::Write as _;
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: face index {index} out of range (mesh has {count} vertices)")]
    IndexOutOfRange { line: usize, index: i64, count: usize },
    #[error("mesh has no faces")]
    NoFaces,
    #[error("triangle {triangle} references vertex {index} but mesh has {count} vertices")]
    BadTriangle { triangle: usize, index: usize, count: usize },
    #[error("invalid camera: {0}")]
    Camera(String),
}

/// Rigid transform: `p_parent = rotation * p_child + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose6D {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

/// On-disk layout: translation in meters, quaternion as `[w, x, y, z]`.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    translation: [f64; 3],
    rotation: [f64; 4],
}

impl From<PoseRepr> for Pose6D {
    fn from(r: PoseRepr) -> Self {
        let [w, x, y, z] = r.rotation;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        let n = q.norm();
        // Already-unit values are kept bit for bit so files round-trip.
        let rotation = if (n - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else if n > 0.0 {
            UnitQuaternion::from_quaternion(q)
        } else {
            UnitQuaternion::identity()
        };
        Pose6D { translation: Vec3::from(r.translation), rotation }
    }
}

impl From<Pose6D> for PoseRepr {
    fn from(p: Pose6D) -> Self {
        let q = p.rotation.quaternion();
        PoseRepr {
            translation: [p.translation.x, p.translation.y, p.translation.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6D {
    pub fn new(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation: renormalize(rotation) }
    }

    pub fn identity() -> Self {
        Self { translation: Vec3::zeros(), rotation: UnitQuaternion::identity() }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { translation, rotation: UnitQuaternion::identity() }
    }

    /// Pose from a translation and a rotation vector (axis * angle, radians).
    pub fn from_rotation_vector(translation: Vec3, rotvec: Vec3) -> Self {
        Self::new(translation, UnitQuaternion::from_scaled_axis(rotvec))
    }

    /// Translation plus a rotation of `yaw` radians about world +z.
    pub fn from_xyz_yaw(translation: Vec3, yaw: f64) -> Self {
        Self::new(translation, UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw))
    }

    /// Camera pose at `eye` looking at `target`. Camera axes follow the usual
    /// optical convention: +z forward, +x right, +y down in the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::x()).normalize();
        } else {
            right.normalize_mut();
        }
        let down = forward.cross(&right);
        let m = Matrix3::from_columns(&[right, down, forward]);
        let rot = Rotation3::from_matrix_unchecked(m);
        Self::new(eye, UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self { translation: -(rinv * self.translation), rotation: rinv }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D::new(
            self.rotation * other.translation + self.translation,
            self.rotation * other.rotation,
        )
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation_error(&self, other: &Pose6D) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Angle of the relative rotation, `2·acos(|q1·q2|)`.
    pub fn rotation_error(&self, other: &Pose6D) -> f64 {
        quaternion_angle_between(&self.rotation, &other.rotation)
    }

    /// 6-vector `[Δtranslation; rotation vector of other⁻¹·self]`, expressed
    /// so that it is unchanged when both poses are left-multiplied by the same
    /// rigid transform.
    pub fn relative_error(&self, other: &Pose6D) -> [f64; 6] {
        let rel = other.inverse().compose(self);
        let rv = rel.rotation.scaled_axis();
        [rel.translation.x, rel.translation.y, rel.translation.z, rv.x, rv.y, rv.z]
    }
}

impl Mul for Pose6D {
    type Output = Pose6D;
    fn mul(self, rhs: Pose6D) -> Pose6D {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose6D> for &'a Pose6D {
    type Output = Pose6D;
    fn mul(self, rhs: &Pose6D) -> Pose6D {
        self.compose(rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

pub fn quaternion_angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let dot = a.coords.dot(&b.coords).abs().min(1.0);
    2.0 * dot.acos()
}

/// Splits `q` into `swing * twist`, where `twist` rotates about `axis` and
/// `swing` about an axis perpendicular to it. The twist is the same whether
/// the product is taken as `swing * twist` or `twist * swing'`.
pub fn swing_twist(
    q: &UnitQuaternion<f64>,
    axis: &Unit<Vector3<f64>>,
) -> (UnitQuaternion<f64>, UnitQuaternion<f64>) {
    let v = q.imag();
    let proj = axis.into_inner() * v.dot(axis);
    let raw = nalgebra::Quaternion::new(q.w, proj.x, proj.y, proj.z);
    let twist = if raw.norm() < 1e-12 {
        // 180° swing: twist is undefined, any choice is valid.
        UnitQuaternion::identity()
    } else {
        UnitQuaternion::from_quaternion(raw)
    };
    let swing = q * twist.inverse();
    (swing, twist)
}

/// Rotation drawn uniformly from SO(3) (normalized 4-D Gaussian).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a, I: IntoIterator<Item = &'a Vec3>>(points: I) -> Option<Aabb> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = Aabb { min: first, max: first };
        for p in it {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }

    /// Depth of interpenetration: the smallest per-axis overlap, or 0 when the
    /// boxes are disjoint or only touch.
    pub fn penetration_depth(&self, other: &Aabb) -> f64 {
        let mut depth = f64::INFINITY;
        for k in 0..3 {
            let overlap = self.max[k].min(other.max[k]) - self.min[k].max(other.min[k]);
            if overlap <= 0.0 {
                return 0.0;
            }
            depth = depth.min(overlap);
        }
        depth
    }

    pub fn transformed(&self, pose: &Pose6D) -> Aabb {
        let corners = self.corners().map(|c| pose.transform_point(&c));
        Aabb::from_points(corners.iter()).expect("8 corners")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        if triangles.is_empty() {
            return Err(GeometryError::NoFaces);
        }
        let count = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i as usize >= count) {
                return Err(GeometryError::BadTriangle { triangle: t, index: bad as usize, count });
            }
        }
        Ok(Self { vertices, triangles })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter()).expect("validated mesh has vertices")
    }

    /// True when the bounding box collapses to a plane (zero extent on some axis).
    pub fn is_flat(&self) -> bool {
        let e = self.aabb().extents();
        e.x <= 0.0 || e.y <= 0.0 || e.z <= 0.0
    }

    pub fn transform(&self, pose: &Pose6D) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Axis-aligned bounding box of the mesh after posing, without allocating
    /// the transformed mesh.
    pub fn posed_aabb(&self, pose: &Pose6D) -> Aabb {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            let p = pose.transform_point(v);
            min = min.inf(&p);
            max = max.sup(&p);
        }
        Aabb { min, max }
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Area-weighted uniform samples on the surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        let areas: Vec<f64> = (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .collect();
        let total: f64 = areas.iter().sum();
        let mut cumulative = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a / total;
            cumulative.push(acc);
        }
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let t = cumulative.partition_point(|&c| c < u).min(areas.len() - 1);
                let [a, b, c] = self.triangle(t);
                let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                a + (b - a) * r1 + (c - a) * r2
            })
            .collect()
    }

    /// Serializes as the `v`/`f` OBJ subset understood by [`parse_obj`].
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {:.9} {:.9} {:.9}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    // Primitive builders. All are centered on their bounding-box center.

    pub fn cuboid(sx: f64, sy: f64, sz: f64) -> TriMesh {
        let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
        Self::box_between(Vec3::new(-hx, -hy, -hz), Vec3::new(hx, hy, hz))
    }

    fn box_between(a: Vec3, b: Vec3) -> TriMesh {
        let mut m = TriMesh { vertices: Vec::new(), triangles: Vec::new() };
        m.push_box(a, b);
        m
    }

    fn push_box(&mut self, a: Vec3, b: Vec3) {
        let base = self.vertices.len() as u32;
        self.vertices.extend(Aabb { min: a, max: b }.corners());
        // Corner index = x + 2y + 4z.
        const QUADS: [[u32; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        for q in QUADS {
            self.triangles.push([base + q[0], base + q[1], base + q[2]]);
            self.triangles.push([base + q[0], base + q[2], base + q[3]]);
        }
    }

    /// Truncated cone about +z with the given bottom/top radii.
    pub fn tapered_cylinder(r_bottom: f64, r_top: f64, height: f64, segments: usize) -> TriMesh {
        let segments = segments.max(3);
        let hz = height / 2.0;
        let mut vertices = Vec::with_capacity(2 * segments + 2);
        for k in 0..segments {
            let a = std::f64::consts::TAU * k as f64 / segments as f64;
            vertices.push(Vec3::new(r_bottom * a.cos(), r_bottom * a.sin(), -hz));
        }
        for k in 0..segments {
            let a = std::f64::consts::TAU * k as f64 / segments as f64;
            vertices.push(Vec3::new(r_top * a.cos(), r_top * a.sin(), hz));
        }
        let bottom_c = vertices.len() as u32;
        vertices.push(Vec3::new(0.0, 0.0, -hz));
        let top_c = vertices.len() as u32;
        vertices.push(Vec3::new(0.0, 0.0, hz));
        let n = segments as u32;
        let mut triangles = Vec::with_capacity(4 * segments);
        for k in 0..n {
            let k1 = (k + 1) % n;
            triangles.push([k, k1, n + k1]);
            triangles.push([k, n + k1, n + k]);
            triangles.push([bottom_c, k1, k]);
            triangles.push([top_c, n + k, n + k1]);
        }
        // Symmetric radii put the bounding box center at the origin already;
        // the cone is centered by construction either way.
        TriMesh { vertices, triangles }
    }

    /// Table: a top slab on four square legs, centered on its bounding box.
    pub fn table(width: f64, depth: f64, height: f64, top_thickness: f64, leg: f64) -> TriMesh {
        let (hx, hy, hz) = (width / 2.0, depth / 2.0, height / 2.0);
        let mut m = TriMesh { vertices: Vec::new(), triangles: Vec::new() };
        m.push_box(Vec3::new(-hx, -hy, hz - top_thickness), Vec3::new(hx, hy, hz));
        for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
            let cx = sx * (hx - leg / 2.0);
            let cy = sy * (hy - leg / 2.0);
            m.push_box(
                Vec3::new(cx - leg / 2.0, cy - leg / 2.0, -hz),
                Vec3::new(cx + leg / 2.0, cy + leg / 2.0, hz - top_thickness),
            );
        }
        m
    }

    /// Round table: a disc top on a central stem, centered on its bounding box.
    pub fn pedestal_table(radius: f64, height: f64, top_thickness: f64, stem_radius: f64, segments: usize) -> TriMesh {
        let hz = height / 2.0;
        let top = Self::tapered_cylinder(radius, radius, top_thickness, segments)
            .transform(&Pose6D::from_translation(Vec3::new(0.0, 0.0, hz - top_thickness / 2.0)));
        let stem_h = height - top_thickness;
        let stem = Self::tapered_cylinder(stem_radius, stem_radius, stem_h, segments)
            .transform(&Pose6D::from_translation(Vec3::new(0.0, 0.0, -hz + stem_h / 2.0)));
        Self::merge(&[top, stem])
    }

    /// Concatenation of several meshes in a shared frame.
    pub fn merge(parts: &[TriMesh]) -> TriMesh {
        let mut m = TriMesh { vertices: Vec::new(), triangles: Vec::new() };
        for part in parts {
            let base = m.vertices.len() as u32;
            m.vertices.extend_from_slice(&part.vertices);
            m.triangles.extend(part.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        m
    }

    /// Square pyramid frustum about +z (wider at the bottom when `top < bottom`).
    pub fn tapered_box(bottom: f64, top: f64, height: f64) -> TriMesh {
        let hz = height / 2.0;
        let (b, t) = (bottom / 2.0, top / 2.0);
        let vertices = vec![
            Vec3::new(-b, -b, -hz),
            Vec3::new(b, -b, -hz),
            Vec3::new(b, b, -hz),
            Vec3::new(-b, b, -hz),
            Vec3::new(-t, -t, hz),
            Vec3::new(t, -t, hz),
            Vec3::new(t, t, hz),
            Vec3::new(-t, t, hz),
        ];
        let triangles = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TriMesh { vertices, triangles }
    }

    /// Axis-aligned rectangle in the local x-y plane (z = 0).
    pub fn quad(width: f64, height: f64) -> TriMesh {
        let (hx, hy) = (width / 2.0, height / 2.0);
        TriMesh {
            vertices: vec![
                Vec3::new(-hx, -hy, 0.0),
                Vec3::new(hx, -hy, 0.0),
                Vec3::new(hx, hy, 0.0),
                Vec3::new(-hx, hy, 0.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }
}

/// Parses the `v x y z` / `f i j k ...` subset of Wavefront OBJ. Faces with
/// more than three indices are fan-triangulated; `i/j/k` index groups keep the
/// position index only. Other line types are ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let mut xyz = [0.0f64; 3];
                for slot in xyz.iter_mut() {
                    let tok = fields.next().ok_or_else(|| GeometryError::Parse {
                        line: line_no,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *slot = tok.parse().map_err(|_| GeometryError::Parse {
                        line: line_no,
                        message: format!("bad coordinate {tok:?}"),
                    })?;
                }
                vertices.push(Vec3::from(xyz));
            }
            Some("f") => {
                let idx = fields
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        head.parse::<i64>().map_err(|_| GeometryError::Parse {
                            line: line_no,
                            message: format!("bad face index {tok:?}"),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if idx.len() < 3 {
                    return Err(GeometryError::Parse {
                        line: line_no,
                        message: "face needs at least three indices".into(),
                    });
                }
                faces.push((line_no, idx));
            }
            _ => {}
        }
    }
    let count = vertices.len();
    let mut triangles = Vec::new();
    for (line, idx) in faces {
        let resolved = idx
            .iter()
            .map(|&i| {
                if i >= 1 && (i as usize) <= count {
                    Ok(i as u32 - 1)
                } else {
                    Err(GeometryError::IndexOutOfRange { line, index: i, count })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        for k in 1..resolved.len() - 1 {
            triangles.push([resolved[0], resolved[k], resolved[k + 1]]);
        }
    }
    TriMesh::new(vertices, triangles)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(Vector2<f64>),
    BehindCamera,
}

impl Projection {
    pub fn pixel(self) -> Option<Vector2<f64>> {
        match self {
            Projection::Pixel(p) => Some(p),
            Projection::BehindCamera => None,
        }
    }
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, width, height, near, far };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::Camera("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(GeometryError::Camera("need 0 < near < far".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::Camera("image dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn project_point(&self, p: &Vec3) -> Projection {
        if p.z < self.near {
            return Projection::BehindCamera;
        }
        Projection::Pixel(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Camera-frame point seen at pixel `(u, v)` with depth `z`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    pub fn contains_pixel(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width as f64 && px.y <= self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Horizontal rectangle on top of an object where another object may rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: f64,
}

impl SupportRegion {
    pub fn floor() -> Self {
        Self {
            x_min: f64::NEG_INFINITY,
            x_max: f64::INFINITY,
            y_min: f64::NEG_INFINITY,
            y_max: f64::INFINITY,
            z: 0.0,
        }
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn is_point(&self) -> bool {
        self.x_max <= self.x_min && self.y_max <= self.y_min
    }

    /// Uniform x-y sample in the rectangle.
    pub fn sample_xy<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let x = if self.x_max > self.x_min { rng.random_range(self.x_min..=self.x_max) } else { self.x_min };
        let y = if self.y_max > self.y_min { rng.random_range(self.y_min..=self.y_max) } else { self.y_min };
        (x, y)
    }
}

/// Top face of the posed mesh's bounding box. This treats any object as a flat
/// shelf at its highest point, which is exact for boxes and tables only.
pub fn support_region(mesh: &TriMesh, pose: &Pose6D) -> SupportRegion {
    aabb_support(&mesh.posed_aabb(pose))
}

pub fn aabb_support(bb: &Aabb) -> SupportRegion {
    SupportRegion { x_min: bb.min.x, x_max: bb.max.x, y_min: bb.min.y, y_max: bb.max.y, z: bb.max.z }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    const CUBE_OBJ: &str = "\
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
";

    #[test]
    fn parse_minimal_triangle() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3").unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn parse_cube_fan_triangulates_quads() {
        let m = parse_obj(CUBE_OBJ).unwrap();
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.triangles().len(), 12);
    }

    #[test]
    fn parse_errors() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9").unwrap_err();
        assert!(matches!(err, GeometryError::IndexOutOfRange { line: 4, index: 9, .. }));
        let err = parse_obj("v 0 0 0\nv 1 x 0\n").unwrap_err();
        assert!(matches!(err, GeometryError::Parse { line: 2, .. }));
        assert_eq!(parse_obj("v 0 0 0\n# nothing else\n").unwrap_err(), GeometryError::NoFaces);
    }

    #[test]
    fn parse_ignores_unknown_lines_and_slash_groups() {
        let m = parse_obj("o thing\nvn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nusemtl x\nf 1/1/1 2/2/2 3//3\n")
            .unwrap();
        assert_eq!(m.triangles().len(), 1);
    }

    #[test]
    fn transform_identity_and_translation() {
        let m = TriMesh::cuboid(1.0, 2.0, 3.0);
        assert_eq!(m.transform(&Pose6D::identity()).vertices(), m.vertices());
        let single = TriMesh::new(vec![Vec3::new(1.0, 0.0, 0.0); 3], vec![[0, 1, 2]]).unwrap();
        let moved = single.transform(&Pose6D::from_translation(Vec3::new(0.0, 0.0, 5.0)));
        assert_eq!(moved.vertices()[0], Vec3::new(1.0, 0.0, 5.0));
    }

    #[test]
    fn transform_rotation_about_z() {
        let single = TriMesh::new(vec![Vec3::new(1.0, 0.0, 0.0); 3], vec![[0, 1, 2]]).unwrap();
        let pose = Pose6D::from_xyz_yaw(Vec3::zeros(), FRAC_PI_2);
        let v = single.transform(&pose).vertices()[0];
        // Rotation-matrix oracle: [[c,-s,0],[s,c,0],[0,0,1]] · (1,0,0).
        let (s, c) = FRAC_PI_2.sin_cos();
        let expected = Vec3::new(c, s, 0.0);
        assert_relative_eq!(v, expected, epsilon = 1e-9);
        assert_relative_eq!(v, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-9);
    }

    fn camera() -> CameraModel {
        CameraModel::new(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1, 20.0).unwrap()
    }

    #[test]
    fn project_point_cases() {
        let cam = camera();
        assert_eq!(cam.project_point(&Vec3::new(0.0, 0.0, 2.0)).pixel(), Some(Vector2::new(320.0, 240.0)));
        assert_eq!(cam.project_point(&Vec3::new(0.0, 0.0, -1.0)), Projection::BehindCamera);
        assert_eq!(cam.project_point(&Vec3::new(1.0, 0.0, 2.0)).pixel(), Some(Vector2::new(570.0, 240.0)));
    }

    #[test]
    fn camera_validation() {
        assert!(CameraModel::new(0.0, 1.0, 0.0, 0.0, 4, 4, 0.1, 1.0).is_err());
        assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, 4, 4, 1.0, 1.0).is_err());
        assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, 0, 4, 0.1, 1.0).is_err());
    }

    #[test]
    fn back_project_inverts_projection() {
        let cam = camera();
        let p = Vec3::new(0.3, -0.2, 2.5);
        let px = cam.project_point(&p).pixel().unwrap();
        assert_relative_eq!(cam.back_project(px.x, px.y, p.z), p, epsilon = 1e-12);
    }

    #[test]
    fn support_region_cases() {
        let cube = TriMesh::cuboid(1.0, 1.0, 1.0);
        let r = support_region(&cube, &Pose6D::identity());
        assert_eq!((r.x_min, r.x_max, r.y_min, r.y_max, r.z), (-0.5, 0.5, -0.5, 0.5, 0.5));
        let r = support_region(&cube, &Pose6D::from_translation(Vec3::new(2.0, 0.0, 0.0)));
        assert_eq!((r.x_min, r.x_max, r.y_min, r.y_max), (1.5, 2.5, -0.5, 0.5));
        let r = support_region(&cube, &Pose6D::from_xyz_yaw(Vec3::zeros(), FRAC_PI_4));
        let h = 2f64.sqrt() / 2.0;
        assert_relative_eq!(r.x_max, h, epsilon = 1e-12);
        assert_relative_eq!(r.x_min, -h, epsilon = 1e-12);
        assert_relative_eq!(r.y_max, h, epsilon = 1e-12);
        assert_relative_eq!(r.z, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_top_is_a_point() {
        let needle = TriMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 0.5)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(needle.is_flat());
        assert!(support_region(&needle, &Pose6D::identity()).is_point());
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vec3::new(1.0, -2.0, 1.5);
        let target = Vec3::new(0.5, 0.5, 0.7);
        let pose = Pose6D::look_at(eye, target, Vec3::z());
        let in_cam = pose.inverse().transform_point(&target);
        assert_relative_eq!(in_cam.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(in_cam.y, 0.0, epsilon = 1e-12);
        assert!(in_cam.z > 0.0);
        // World up appears as image "up" (negative camera y).
        let above = pose.inverse().transform_point(&(target + Vec3::z() * 0.1));
        assert!(above.y < 0.0);
    }

    #[test]
    fn swing_twist_removes_axis_rotation() {
        let axis = Vector3::z_axis();
        let twist = UnitQuaternion::from_axis_angle(&axis, 1.1);
        let swing = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.3);
        let (s, t) = swing_twist(&(swing * twist), &axis);
        assert_relative_eq!(s.angle(), 0.3, epsilon = 1e-12);
        assert_relative_eq!(t.angle(), 1.1, epsilon = 1e-12);
    }

    #[test]
    fn tapered_cylinder_is_centered() {
        let m = TriMesh::tapered_cylinder(0.05, 0.08, 0.1, 16);
        let bb = m.aabb();
        assert_relative_eq!(bb.min.z, -0.05);
        assert_relative_eq!(bb.max.z, 0.05);
        assert!(m.surface_area() > 0.0);
    }

    #[test]
    fn penetration_depth_is_smallest_overlap() {
        let a = Aabb { min: Vec3::zeros(), max: Vec3::new(1.0, 1.0, 1.0) };
        let b = Aabb { min: Vec3::new(0.5, 0.2, 0.9), max: Vec3::new(2.0, 2.0, 2.0) };
        assert_relative_eq!(a.penetration_depth(&b), 0.1, epsilon = 1e-12);
        let c = Aabb { min: Vec3::new(0.0, 0.0, 1.0), max: Vec3::new(1.0, 1.0, 2.0) };
        assert_eq!(a.penetration_depth(&c), 0.0);
    }

    fn arb_pose() -> impl Strategy<Value = Pose6D> {
        (
            prop::array::uniform3(-5.0f64..5.0),
            prop::array::uniform3(-3.0f64..3.0),
        )
            .prop_map(|(t, r)| Pose6D::from_rotation_vector(Vec3::from(t), Vec3::from(r)))
    }

    #[test]
    fn pedestal_table_is_centered() {
        let t = TriMesh::pedestal_table(0.35, 0.6, 0.04, 0.05, 16);
        let bb = t.aabb();
        assert!((bb.min - Vec3::new(-0.35, -0.35, -0.3)).norm() < 1e-9);
        assert!((bb.max - Vec3::new(0.35, 0.35, 0.3)).norm() < 1e-9);
        assert_eq!(t.triangles().len(), 2 * 4 * 16);
    }

    proptest! {
        #[test]
        fn composition_round_trip(p in arb_pose(), q in arb_pose()) {
            let back = (p * q) * q.inverse();
            prop_assert!(back.translation_error(&p) < 1e-7);
            prop_assert!(back.rotation_error(&p) < 1e-7);
            prop_assert!(((p * q).rotation.norm() - 1.0).abs() < 1e-9);
            let id = p * p.inverse();
            prop_assert!(id.translation.norm() < 1e-9);
            prop_assert!(id.rotation.angle() < 1e-7);
        }

        #[test]
        fn composition_is_associative(p in arb_pose(), q in arb_pose(), r in arb_pose()) {
            let a = (p * q) * r;
            let b = p * (q * r);
            prop_assert!(a.translation_error(&b) < 1e-9);
            prop_assert!(a.rotation_error(&b) < 1e-7);
        }

        #[test]
        fn projection_is_scale_consistent(
            x in -2.0f64..2.0, y in -2.0f64..2.0, z in 0.5f64..8.0, s in 0.1f64..10.0
        ) {
            let cam = camera();
            let a = cam.project_point(&Vec3::new(x, y, z)).pixel().unwrap();
            let b = cam.project_point(&Vec3::new(s * x, s * y, s * z)).pixel().unwrap();
            prop_assert!((a - b).norm() < 1e-9);
        }

        #[test]
        fn obj_round_trip(verts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 3..20)) {
            let n = verts.len() as u32;
            let tris: Vec<[u32; 3]> = (0..n - 2).map(|i| [i, i + 1, i + 2]).collect();
            let mesh = TriMesh::new(verts.into_iter().map(Vec3::from).collect(), tris).unwrap();
            let back = parse_obj(&mesh.to_obj()).unwrap();
            prop_assert_eq!(back.triangles(), mesh.triangles());
            for (a, b) in back.vertices().iter().zip(mesh.vertices()) {
                prop_assert!((a - b).norm() < 1e-6);
            }
        }

        #[test]
        fn support_height_is_max_vertex_z(p in arb_pose()) {
            let mesh = TriMesh::tapered_cylinder(0.1, 0.2, 0.3, 12);
            let r = support_region(&mesh, &p);
            let max_z = mesh.transform(&p).vertices().iter().map(|v| v.z).fold(f64::MIN, f64::max);
            prop_assert!((r.z - max_z).abs() < 1e-9);
        }
    }
}
