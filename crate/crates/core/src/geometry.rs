//! Value types shared by every stage: points, rigid motions, clouds and meshes.
//!
//! All lengths are millimeters. Clouds are immutable values: every operation
//! returns a new cloud and leaves its input untouched.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Frame label of the shared robot base frame. Both cameras' clouds are
/// expressed here after projection, and the parametric tube model is defined
/// in it, so it doubles as the reference frame for registration.
pub const BASE_FRAME: &str = "base";

/// Frame label for clouds whose frame is not known (e.g. PLY files without a
/// frame comment).
pub const UNKNOWN_FRAME: &str = "unknown";

const ORTHONORMAL_TOL: f64 = 1e-9;
const UNIT_NORMAL_TOL: f64 = 1e-6;

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is orthonormal with
    /// determinant +1 to within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("transform has non-finite entries"));
        }
        let err = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if err > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation is not proper orthonormal (|R·Rᵀ−I|max = {err:.3e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Caller guarantees `rotation` is a proper rotation (e.g. it came out of
    /// `Rotation3`).
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle_rad: f64, translation: Vec3) -> Result<Self> {
        let norm = axis.norm();
        if !(norm > 0.0) || !angle_rad.is_finite() {
            return Err(Error::invalid("axis-angle needs a nonzero axis and finite angle"));
        }
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle_rad);
        Self::new(r.into_inner(), translation)
    }

    /// Rotation `Rz(z)·Ry(y)·Rx(x)` from angles in degrees.
    pub fn from_euler_deg(rx: f64, ry: f64, rz: f64, translation: Vec3) -> Self {
        let r = Rotation3::from_euler_angles(rx.to_radians(), ry.to_radians(), rz.to_radians());
        Self::from_parts_unchecked(r.into_inner(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(&self, b: &RigidTransform) -> RigidTransform {
        compose(self, b)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        // atan2 form stays accurate near 0 and π, unlike acos of the trace.
        let r = &self.rotation;
        let s = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
        let c = (r.trace() - 1.0) / 2.0;
        s.atan2(c)
    }

    /// Row-major rotation followed by translation, the layout used in text
    /// headers.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t[0], t[1], t[2],
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let r = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        Self::new(r, Vec3::new(v[9], v[10], v[11]))
    }
}

/// Composition `a ∘ b`: `compose(a, b).apply(p) == a.apply(&b.apply(p))`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Max-abs entry of `R·Rᵀ − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).abs().max()
}

/// Ordered points with optional per-point color and normal, tagged with the
/// name of the frame the coordinates are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    colors: Option<Vec<[u8; 3]>>,
    normals: Option<Vec<Vec3>>,
    frame: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: impl Into<String>) -> Result<Self> {
        Self::with_attributes(points, None, None, frame)
    }

    pub fn empty(frame: impl Into<String>) -> Self {
        Self {
            points: Vec::new(),
            colors: None,
            normals: None,
            frame: frame.into(),
        }
    }

    pub fn with_attributes(
        points: Vec<Point3>,
        colors: Option<Vec<[u8; 3]>>,
        normals: Option<Vec<Vec3>>,
        frame: impl Into<String>,
    ) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::invalid(format!(
                    "{} colors for {} points",
                    c.len(),
                    points.len()
                )));
            }
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::invalid(format!(
                    "{} normals for {} points",
                    n.len(),
                    points.len()
                )));
            }
            if let Some(i) = n
                .iter()
                .position(|v| !((v.norm() - 1.0).abs() <= UNIT_NORMAL_TOL))
            {
                return Err(Error::invalid(format!("normal {i} is not unit length")));
            }
        }
        Ok(Self {
            points,
            colors,
            normals,
            frame: frame.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn frame(&self) -> &str {
        &self.frame
    }

    pub fn with_frame(mut self, frame: impl Into<String>) -> Self {
        self.frame = frame.into();
        self
    }

    /// Replaces (or attaches) normals.
    pub fn with_normals(self, normals: Vec<Vec3>) -> Result<Self> {
        Self::with_attributes(self.points, self.colors, Some(normals), self.frame)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    /// New cloud holding the points at `indices`, attributes carried along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            frame: self.frame.clone(),
        }
    }

    /// Replaces point coordinates, keeping attributes. Lengths must match.
    pub fn with_points(&self, points: Vec<Point3>) -> Result<PointCloud> {
        if points.len() != self.points.len() {
            return Err(Error::invalid("replacement point count differs"));
        }
        Self::with_attributes(
            points,
            self.colors.clone(),
            self.normals.clone(),
            self.frame.clone(),
        )
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vec3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Rounds coordinates and normals to `f32`, the precision used by the
    /// PLY codec. Rounded normals already unit to 1e-6 are kept as is, so
    /// a decoded cloud and this one are identical and the map is idempotent.
    pub fn to_storage_precision(&self) -> PointCloud {
        let round = |v: f64| v as f32 as f64;
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| Point3::new(round(p.x), round(p.y), round(p.z)))
                .collect(),
            colors: self.colors.clone(),
            normals: self.normals.as_ref().map(|ns| {
                ns.iter()
                    .map(|n| storage_normal([n.x as f32, n.y as f32, n.z as f32]))
                    .collect()
            }),
            frame: self.frame.clone(),
        }
    }
}

/// Normal as reconstructed from single-precision storage. Values within
/// f32 rounding of unit length are kept bit for bit, so a save/load round
/// trip is the identity; others are renormalized.
pub(crate) fn storage_normal(n: [f32; 3]) -> Vec3 {
    let v = Vec3::new(n[0] as f64, n[1] as f64, n[2] as f64);
    let len = v.norm();
    if len > 0.0 && (len - 1.0).abs() > STORED_UNIT_SLACK {
        v / len
    } else {
        v
    }
}

/// Largest unit-length error a normal picks up from f32 rounding.
const STORED_UNIT_SLACK: f64 = 1e-6;

/// `apply_transform`: every point becomes `R·p + t`, normals are rotated,
/// colors are kept, and the result is labelled with `target_frame`.
pub fn apply_transform(
    cloud: &PointCloud,
    transform: &RigidTransform,
    target_frame: &str,
) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| transform.apply(p)).collect(),
        colors: cloud.colors.clone(),
        normals: cloud.normals.as_ref().map(|ns| {
            ns.iter()
                .map(|n| transform.apply_vector(n).normalize())
                .collect()
        }),
        frame: target_frame.to_string(),
    }
}

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= n) {
                return Err(Error::invalid(format!("triangle {i} has an out-of-range index")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::invalid(format!("triangle {i} is degenerate")));
            }
        }
        if let Some(i) = vertices.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("vertex {i} is not finite")));
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Number of triangles incident to each undirected edge.
    pub fn edge_incidence(&self) -> std::collections::HashMap<(u32, u32), usize> {
        let mut edges = std::collections::HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Closed: every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_incidence().values().all(|&c| c == 2)
    }

    /// No edge is shared by more than two triangles.
    pub fn is_edge_manifold(&self) -> bool {
        self.edge_incidence().values().all(|&c| c <= 2)
    }

    /// `V − E + F` over the vertices actually referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let edges = self.edge_incidence().len() as i64;
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - edges + self.triangles.len() as i64
    }

    /// Vertices as an unattributed cloud.
    pub fn vertex_cloud(&self, frame: &str) -> PointCloud {
        PointCloud::empty(frame).with_points_unchecked(self.vertices.clone())
    }
}

impl PointCloud {
    fn with_points_unchecked(mut self, points: Vec<Point3>) -> Self {
        self.points = points;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vec3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
        );
        RigidTransform::from_axis_angle(axis, rng.random_range(-3.0..3.0), t).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                )
            })
            .collect();
        PointCloud::new(pts, BASE_FRAME).unwrap()
    }

    #[test]
    fn identity_transform_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(&mut rng, 50);
        let out = apply_transform(&c, &RigidTransform::identity(), BASE_FRAME);
        assert_eq!(out, c);
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)], "a").unwrap();
        let t = RigidTransform::from_axis_angle(Vec3::z(), FRAC_PI_2, Vec3::zeros()).unwrap();
        let out = apply_transform(&c, &t, "b");
        let p = out.points()[0];
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert_eq!(out.frame(), "b");
    }

    #[test]
    fn transform_then_inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_cloud(&mut rng, 100);
        let t = random_transform(&mut rng);
        let back = apply_transform(&apply_transform(&c, &t, "x"), &t.inverse(), BASE_FRAME);
        for (a, b) in c.points().iter().zip(back.points()) {
            assert!((a - b).abs().max() < 1e-9);
        }
    }

    #[test]
    fn normals_rotate_and_colors_survive() {
        let c = PointCloud::with_attributes(
            vec![Point3::origin()],
            Some(vec![[1, 2, 3]]),
            Some(vec![Vec3::x()]),
            "a",
        )
        .unwrap();
        let t = RigidTransform::from_axis_angle(Vec3::z(), FRAC_PI_2, Vec3::new(5.0, 0.0, 0.0))
            .unwrap();
        let out = apply_transform(&c, &t, "b");
        assert!((out.normals().unwrap()[0] - Vec3::y()).norm() < 1e-12);
        assert_eq!(out.colors().unwrap()[0], [1, 2, 3]);
    }

    #[test]
    fn compose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_transform(&mut rng);
        let id = RigidTransform::identity();
        let c = compose(&id, &b);
        assert!((c.rotation() - b.rotation()).abs().max() < 1e-15);
        assert!((c.translation() - b.translation()).abs().max() < 1e-15);

        let e = compose(&b.inverse(), &b);
        assert!((e.rotation() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(e.translation().abs().max() < 1e-12);
    }

    #[test]
    fn compose_is_associative_on_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (a, b, c) = (
                random_transform(&mut rng),
                random_transform(&mut rng),
                random_transform(&mut rng),
            );
            let left = compose(&compose(&a, &b), &c);
            let right = compose(&a, &compose(&b, &c));
            for p in random_cloud(&mut rng, 10).points() {
                assert!((left.apply(p) - right.apply(p)).abs().max() < 1e-9);
                assert!((left.apply(p) - a.apply(&b.apply(&c.apply(p)))).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_improper_rotation() {
        let reflect = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflect, Vec3::zeros()).is_err());
        assert!(RigidTransform::new(Matrix3::identity() * 1.001, Vec3::zeros()).is_err());
    }

    #[test]
    fn cloud_validation() {
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)], "a").is_err());
        assert!(PointCloud::with_attributes(
            vec![Point3::origin()],
            Some(vec![]),
            None,
            "a"
        )
        .is_err());
        assert!(PointCloud::with_attributes(
            vec![Point3::origin()],
            None,
            Some(vec![Vec3::new(0.0, 0.0, 2.0)]),
            "a"
        )
        .is_err());
    }

    #[test]
    fn mesh_validation_and_topology() {
        assert!(TriangleMesh::new(vec![Point3::origin(); 3], vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(vec![Point3::origin(); 3], vec![[0, 1, 1]]).is_err());

        // Tetrahedron: closed, χ = 2.
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        let m = TriangleMesh::new(v, vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]).unwrap();
        assert!(m.is_watertight());
        assert!(m.is_edge_manifold());
        assert_eq!(m.euler_characteristic(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn transform() -> impl Strategy<Value = RigidTransform> {
            (
                prop::array::uniform3(-1.0f64..1.0),
                -3.1f64..3.1,
                prop::array::uniform3(-100.0f64..100.0),
            )
                .prop_filter_map("zero axis", |(ax, ang, t)| {
                    RigidTransform::from_axis_angle(Vec3::from(ax), ang, Vec3::from(t)).ok()
                })
        }

        proptest! {
            #[test]
            fn composed_rotations_stay_proper(a in transform(), b in transform(), c in transform()) {
                let r = compose(&compose(&a, &b), &c.inverse());
                prop_assert!(orthonormality_error(r.rotation()) <= 1e-9);
                prop_assert!((r.rotation().determinant() - 1.0).abs() <= 1e-9);
            }

            #[test]
            fn distances_are_preserved(
                t in transform(),
                p in prop::array::uniform3(-100.0f64..100.0),
                q in prop::array::uniform3(-100.0f64..100.0),
            ) {
                let (p, q) = (Point3::from(p), Point3::from(q));
                let d = (p - q).norm();
                let dt = (t.apply(&p) - t.apply(&q)).norm();
                prop_assert!((dt - d).abs() <= 1e-9 * (1.0 + d));
            }
        }
    }
}
