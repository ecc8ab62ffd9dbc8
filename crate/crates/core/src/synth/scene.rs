//! Ray targets: analytic primitives, the notched tube and its mounting rack.

use crate::geometry::{Point3, Vec3};

use super::ntcr::NtcrSpec;

/// What a camera ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SurfaceLabel {
    None = 0,
    Target = 1,
    Backdrop = 2,
}

impl SurfaceLabel {
    pub fn from_u8(v: u8) -> Self {
        match v {
            1 => SurfaceLabel::Target,
            2 => SurfaceLabel::Backdrop,
            _ => SurfaceLabel::None,
        }
    }
}

/// Anything a virtual camera can see.
pub trait RayTarget: Sync {
    /// Smallest `t > 0` with `origin + t·dir` on the surface. `dir` need not
    /// be unit length.
    fn intersect(&self, origin: &Point3, dir: &Vec3) -> Option<(f64, SurfaceLabel)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Point3,
    pub normal: Vec3,
}

impl Plane {
    pub fn new(point: Point3, normal: Vec3) -> Self {
        Self {
            point,
            normal: normal.normalize(),
        }
    }
}

impl RayTarget for Plane {
    fn intersect(&self, origin: &Point3, dir: &Vec3) -> Option<(f64, SurfaceLabel)> {
        let denom = dir.dot(&self.normal);
        if denom == 0.0 {
            return None;
        }
        let t = (self.point - origin).dot(&self.normal) / denom;
        (t > 0.0).then_some((t, SurfaceLabel::Target))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Point3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Point3, radius: f64) -> Self {
        Self { center, radius }
    }
}

impl RayTarget for Sphere {
    fn intersect(&self, origin: &Point3, dir: &Vec3) -> Option<(f64, SurfaceLabel)> {
        let oc = origin - self.center;
        let a = dir.norm_squared();
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Numerically stable pair of roots.
        let q = -(b + b.signum() * sq);
        let (t0, t1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        if lo > 0.0 {
            Some((lo, SurfaceLabel::Target))
        } else if hi > 0.0 {
            Some((hi, SurfaceLabel::Target))
        } else {
            None
        }
    }
}

/// Axis-aligned box; also used for the rack geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Parameter interval where the ray is inside the box.
    pub fn slab(&self, origin: &Point3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - origin[i]) / dir[i];
            let b = (self.max[i] - origin[i]) / dir[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t1 > 0.0).then_some((t0, t1))
    }
}

impl RayTarget for Aabb {
    fn intersect(&self, origin: &Point3, dir: &Vec3) -> Option<(f64, SurfaceLabel)> {
        let (t0, t1) = self.slab(origin, dir)?;
        let t = if t0 > 0.0 { t0 } else { t1 };
        Some((t, SurfaceLabel::Target))
    }
}

/// Base plate under the tube and a post beside its proximal end: stand-ins
/// for the rack that holds the robot between the cameras.
pub fn rack_geometry(spec: &NtcrSpec) -> Vec<Aabb> {
    let (lo, hi) = spec.bounds();
    vec![
        Aabb::new(
            Point3::new(lo.x - 15.0, lo.y - 10.0, -20.0),
            Point3::new(hi.x + 15.0, lo.y - 8.0, 20.0),
        ),
        Aabb::new(
            Point3::new(lo.x - 10.0, lo.y - 8.0, -4.0),
            Point3::new(lo.x - 4.0, hi.y + 6.0, 4.0),
        ),
    ]
}

/// Marching step for the tube's implicit solid, mm.
const MARCH_STEP: f64 = 0.01;

/// The notched tube, optionally mounted on its rack.
#[derive(Debug, Clone)]
pub struct NtcrScene {
    spec: NtcrSpec,
    bounds: Aabb,
    rack: Vec<Aabb>,
}

impl NtcrScene {
    pub fn new(spec: NtcrSpec, with_rack: bool) -> Self {
        let (lo, hi) = spec.bounds();
        let pad = Vec3::repeat(1e-3);
        Self {
            spec,
            bounds: Aabb::new(lo - pad, hi + pad),
            rack: if with_rack { rack_geometry(&spec) } else { Vec::new() },
        }
    }

    pub fn spec(&self) -> &NtcrSpec {
        &self.spec
    }

    pub fn rack(&self) -> &[Aabb] {
        &self.rack
    }

    fn solid(&self, p: &Point3) -> bool {
        self.spec.in_solid(&self.spec.to_tube(p))
    }

    fn intersect_tube(&self, origin: &Point3, dir: &Vec3) -> Option<f64> {
        let (t0, t1) = self.bounds.slab(origin, dir)?;
        let t0 = t0.max(0.0);
        let dt = MARCH_STEP / dir.norm();
        let mut prev = t0;
        if self.solid(&(origin + dir * prev)) {
            return Some(prev);
        }
        let mut t = t0;
        while t < t1 {
            t = (t + dt).min(t1);
            if self.solid(&(origin + dir * t)) {
                let (mut lo, mut hi) = (prev, t);
                for _ in 0..48 {
                    let mid = 0.5 * (lo + hi);
                    if self.solid(&(origin + dir * mid)) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            prev = t;
        }
        None
    }
}

impl RayTarget for NtcrScene {
    fn intersect(&self, origin: &Point3, dir: &Vec3) -> Option<(f64, SurfaceLabel)> {
        let mut best = self
            .intersect_tube(origin, dir)
            .map(|t| (t, SurfaceLabel::Target));
        for b in &self.rack {
            if let Some((t, _)) = b.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, SurfaceLabel::Backdrop));
                }
            }
        }
        best
    }
}
