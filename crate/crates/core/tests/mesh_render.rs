use ctmap::geometry::{parse_obj, CameraModel, Pose6D, TriMesh, Vec3};
use ctmap::render::{self, DepthImage};

const QUAD_OBJ: &str = "\
# unit square, one quad face
v -0.5 -0.5 0
v 0.5 -0.5 0
v 0.5 0.5 0
v -0.5 0.5 0
vn 0 0 1
f 1//1 2//1 3//1 4//1
";

#[test]
fn obj_quad_renders_like_builtin_quad() {
    let parsed = parse_obj(QUAD_OBJ).unwrap();
    assert_eq!(parsed.triangles().len(), 2);
    let cam = CameraModel::new(120.0, 120.0, 40.0, 30.0, 80, 60, 0.1, 10.0).unwrap();
    let pose = Pose6D::from_translation(Vec3::new(0.1, -0.05, 1.5));
    let a = render::render_depth(&[(&parsed, pose)], &cam, &Pose6D::identity());
    let b = render::render_depth(&[(&TriMesh::quad(1.0, 1.0), pose)], &cam, &Pose6D::identity());
    assert_eq!(a.valid_count(), b.valid_count());
    assert!(a.valid_count() > 0);
}

#[test]
fn written_obj_parses_back() {
    let mesh = TriMesh::tapered_cylinder(0.3, 0.2, 0.5, 12);
    let back = parse_obj(&mesh.to_obj()).unwrap();
    assert_eq!(back.triangles(), mesh.triangles());
    for (p, q) in back.vertices().iter().zip(mesh.vertices()) {
        assert!((p - q).norm() < 1e-9);
    }
}

#[test]
fn pgm_dump_stores_millimetres() {
    let img = DepthImage::from_raw(3, 2, vec![1.0, 2.5, 0.0, 0.001, 4.2, 65.0]).unwrap();
    let mut buf = Vec::new();
    img.write_pgm(&mut buf).unwrap();
    let header = b"P5\n3 2\n65535\n";
    assert!(buf.starts_with(header));
    let px: Vec<u16> = buf[header.len()..].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    assert_eq!(px, vec![1000, 2500, 0, 1, 4200, 65000]);
}
