//! Pinhole conversion between depth maps and point clouds.
//!
//! A pixel `(u, v)` with depth `Z` back-projects to camera coordinates
//! `X = (u − cx)·Z/fx`, `Y = (v − cy)·Z/fy`, `Z`, which are then mapped into
//! the base frame with the depth map's world-from-camera pose. Pixel centers
//! sit at integer coordinates. No lens distortion is modelled.

use log::warn;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform, Vec3, BASE_FRAME};

/// Reserved depth value for pixels without a measurement.
pub const INVALID_DEPTH: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Square pixels with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        let inside = |c: f64, n: usize| c >= 0.0 && c <= n as f64 - 1.0;
        if !inside(self.cx, width) || !inside(self.cy, height) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside a {width}×{height} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Unnormalized viewing ray `(x/z, y/z, 1)` through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Point3 {
        Point3::from(self.ray(u, v) * depth)
    }

    /// `(u, v)` of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Point3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoGeometry {
    /// Baseline between the two imagers, mm.
    pub baseline: f64,
    /// Focal length, pixels.
    pub focal: f64,
}

impl StereoGeometry {
    pub fn new(baseline: f64, focal: f64) -> Result<Self> {
        if !(baseline > 0.0 && focal > 0.0) {
            return Err(Error::invalid("stereo baseline and focal length must be positive"));
        }
        Ok(Self { baseline, focal })
    }

    /// `d = b·f / Z`.
    pub fn depth_to_disparity(&self, depth: f64) -> f64 {
        self.baseline * self.focal / depth
    }
}

/// `Z = b·f / d`. Zero disparity is a point at infinity and yields
/// [`INVALID_DEPTH`].
pub fn disparity_to_depth(disparity: f64, g: &StereoGeometry) -> Result<f64> {
    if disparity < 0.0 || disparity.is_nan() {
        return Err(Error::NegativeDisparity(disparity));
    }
    if disparity == 0.0 {
        return Ok(INVALID_DEPTH);
    }
    Ok(g.baseline * g.focal / disparity)
}

/// Row-major depth image with its camera model.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    intrinsics: CameraIntrinsics,
    /// World-from-camera.
    camera_pose: RigidTransform,
}

impl DepthMap {
    pub fn new(
        width: usize,
        height: usize,
        depth: Vec<f64>,
        intrinsics: CameraIntrinsics,
        camera_pose: RigidTransform,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("depth map must have positive size"));
        }
        if depth.len() != width * height {
            return Err(Error::invalid(format!(
                "depth array has {} entries for a {width}×{height} map",
                depth.len()
            )));
        }
        if let Some(i) = depth
            .iter()
            .position(|&d| !(d == INVALID_DEPTH || (d.is_finite() && d > 0.0)))
        {
            return Err(Error::invalid(format!("pixel {i} has invalid depth {}", depth[i])));
        }
        intrinsics.validate(width, height)?;
        Ok(Self {
            width,
            height,
            depth,
            intrinsics,
            camera_pose,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn camera_pose(&self) -> &RigidTransform {
        &self.camera_pose
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d != INVALID_DEPTH).count()
    }

    /// Camera center in the world frame.
    pub fn camera_center(&self) -> Point3 {
        self.camera_pose.apply(&Point3::origin())
    }

    /// Projects a world point to `(u, v, depth)`.
    pub fn project(&self, p: &Point3) -> Option<(f64, f64, f64)> {
        let pc = self.camera_pose.inverse().apply(p);
        self.intrinsics.project(&pc).map(|(u, v)| (u, v, pc.z))
    }
}

/// Back-projects every valid pixel and maps it into the base frame. Output
/// order is row-major pixel order.
pub fn depth_to_cloud(map: &DepthMap) -> PointCloud {
    let k = &map.intrinsics;
    let mut points = Vec::with_capacity(map.valid_count());
    for v in 0..map.height {
        for u in 0..map.width {
            let z = map.depth[v * map.width + u];
            if z == INVALID_DEPTH {
                continue;
            }
            let pc = k.back_project(u as f64, v as f64, z);
            points.push(map.camera_pose.apply(&pc));
        }
    }
    if points.is_empty() {
        warn!("depth map has no valid pixels; producing an empty cloud");
    }
    PointCloud::new(points, BASE_FRAME).expect("finite depths give finite points")
}

/// Concatenates two clouds in the same frame; `a`'s points come first.
/// Attributes survive only when both inputs carry them.
pub fn merge_clouds(a: &PointCloud, b: &PointCloud) -> Result<PointCloud> {
    if a.frame() != b.frame() {
        return Err(Error::FrameMismatch {
            expected: a.frame().to_string(),
            found: b.frame().to_string(),
        });
    }
    if a.is_empty() {
        return Ok(b.clone());
    }
    if b.is_empty() {
        return Ok(a.clone());
    }
    let points = a.points().iter().chain(b.points()).copied().collect();
    let colors = match (a.colors(), b.colors()) {
        (Some(x), Some(y)) => Some(x.iter().chain(y).copied().collect()),
        _ => None,
    };
    let normals = match (a.normals(), b.normals()) {
        (Some(x), Some(y)) => Some(x.iter().chain(y).copied().collect()),
        _ => None,
    };
    PointCloud::with_attributes(points, colors, normals, a.frame())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_depth, Plane, RenderOptions, Sphere, VirtualCamera};
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::centered(380.0, 640, 480)
    }

    #[test]
    fn disparity_formula() {
        let g = StereoGeometry::new(50.0, 400.0).unwrap();
        assert_eq!(disparity_to_depth(200.0, &g).unwrap(), 100.0);
        assert_eq!(disparity_to_depth(0.0, &g).unwrap(), INVALID_DEPTH);
        assert!(matches!(
            disparity_to_depth(-1.0, &g),
            Err(Error::NegativeDisparity(_))
        ));
    }

    proptest! {
        #[test]
        fn disparity_round_trip(z in 1.0f64..2000.0, b in 1.0f64..100.0, f in 100.0f64..2000.0) {
            let g = StereoGeometry::new(b, f).unwrap();
            let back = disparity_to_depth(g.depth_to_disparity(z), &g).unwrap();
            prop_assert!((back - z).abs() <= 1e-9 * z.max(1.0));
        }
    }

    #[test]
    fn principal_pixel_maps_to_optical_axis() {
        let kk = k();
        let mut depth = vec![INVALID_DEPTH; 640 * 480];
        // Principal point is between pixels for even sizes; use an odd map.
        let kk_odd = CameraIntrinsics::centered(380.0, 641, 481);
        depth.resize(641 * 481, INVALID_DEPTH);
        depth[240 * 641 + 320] = 42.0;
        let map = DepthMap::new(641, 481, depth, kk_odd, RigidTransform::identity()).unwrap();
        let c = depth_to_cloud(&map);
        assert_eq!(c.len(), 1);
        assert!((c.points()[0] - Point3::new(0.0, 0.0, 42.0)).norm() < 1e-12);
        assert_eq!(c.frame(), BASE_FRAME);

        // One focal length to the right of the principal point: X = Z.
        let p = kk.back_project(kk.cx + kk.fx, kk.cy, 7.5);
        assert!((p.x - 7.5).abs() < 1e-12);
    }

    #[test]
    fn all_invalid_gives_empty_cloud() {
        let map = DepthMap::new(4, 3, vec![INVALID_DEPTH; 12], CameraIntrinsics::centered(10.0, 4, 3), RigidTransform::identity()).unwrap();
        assert!(depth_to_cloud(&map).is_empty());
    }

    #[test]
    fn map_validation() {
        let kk = CameraIntrinsics::centered(10.0, 4, 3);
        assert!(DepthMap::new(4, 3, vec![1.0; 11], kk, RigidTransform::identity()).is_err());
        assert!(DepthMap::new(4, 3, vec![-1.0; 12], kk, RigidTransform::identity()).is_err());
        let off = CameraIntrinsics { cx: 10.0, ..kk };
        assert!(DepthMap::new(4, 3, vec![1.0; 12], off, RigidTransform::identity()).is_err());
    }

    #[test]
    fn plane_render_back_projects_onto_plane() {
        let cam = VirtualCamera::looking_at_origin(90.0, 160, 120, 95.0);
        let plane = Plane::new(Point3::new(0.0, 0.0, 3.0), Vec3::z());
        let opts = RenderOptions { noise: false };
        let map = render_depth(&plane, &cam, 1, &opts).unwrap().map;
        let cloud = depth_to_cloud(&map);
        assert_eq!(cloud.len(), map.valid_count());
        // Quantization only: error bounded by half a disparity step in depth.
        let step = cam.depth_quantization_step(93.0);
        for p in cloud.points() {
            assert!((p.z - 3.0).abs() <= step * 0.6 + 1e-9, "z = {}", p.z);
        }
    }

    #[test]
    fn projection_round_trip() {
        let cam = VirtualCamera::looking_at_origin(90.0, 160, 120, 95.0);
        let sphere = Sphere::new(Point3::origin(), 20.0);
        let opts = RenderOptions::default();
        let map = render_depth(&sphere, &cam, 5, &opts).unwrap().map;
        let cloud = depth_to_cloud(&map);
        let mut it = cloud.points().iter();
        for v in 0..map.height() {
            for u in 0..map.width() {
                let z = map.depth_at(u, v);
                if z == INVALID_DEPTH {
                    continue;
                }
                let p = it.next().unwrap();
                let (pu, pv, pz) = map.project(p).unwrap();
                assert!((pu - u as f64).abs() < 0.5 && (pv - v as f64).abs() < 0.5);
                assert!((pz - z).abs() <= 1e-6 * z);
            }
        }
    }

    #[test]
    fn merge_cardinality_order_and_frames() {
        let a = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0); 100], "base").unwrap();
        let b = PointCloud::new(vec![Point3::new(2.0, 0.0, 0.0); 150], "base").unwrap();
        let m = merge_clouds(&a, &b).unwrap();
        assert_eq!(m.len(), 250);
        assert_eq!(m.points()[99].x, 1.0);
        assert_eq!(m.points()[100].x, 2.0);
        assert_eq!(merge_clouds(&a, &PointCloud::empty("base")).unwrap(), a);
        let c = PointCloud::new(vec![Point3::origin()], "camera").unwrap();
        assert!(matches!(merge_clouds(&a, &c), Err(Error::FrameMismatch { .. })));

        let ab_c = merge_clouds(&merge_clouds(&a, &b).unwrap(), &a).unwrap();
        let a_bc = merge_clouds(&a, &merge_clouds(&b, &a).unwrap()).unwrap();
        assert_eq!(ab_c, a_bc);
    }
}
