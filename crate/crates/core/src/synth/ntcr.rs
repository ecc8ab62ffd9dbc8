//! Parametric notched tube.
//!
//! The backbone starts at `(−L/2, 0, 0)` heading along `+x` and bends with
//! constant curvature in the `xy` plane toward `+y`. At arc length `s` the
//! cross-section is spanned by the in-plane normal `n(s)` (pointing toward
//! the center of curvature, `+y` when straight) and the binormal `+z`; a
//! point is written `c(s) + y·n(s) + z·ẑ` and we call `(s, y, z)` its tube
//! coordinates.
//!
//! Each notch is a rectangular cut: within its axial window, everything on
//! the cut side of the chord `h = R − notch_depth` is removed, where
//! `h = y·cos φ + z·sin φ` and `φ` is the notch phase. All notches share the
//! same phase.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Vec3, BASE_FRAME};

/// Smallest reference cloud considered usable.
pub const MIN_REFERENCE_POINTS: usize = 100;

const SAMPLER_SEED: u64 = 0x6e74_6372;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NtcrSpec {
    /// mm
    pub outer_diameter: f64,
    /// mm
    pub wall_thickness: f64,
    /// Backbone arc length, mm.
    pub tube_length: f64,
    pub notch_count: u32,
    /// Axial extent of each cut, mm.
    pub notch_width: f64,
    /// Radial cut depth measured from the outer surface, mm.
    pub notch_depth: f64,
    /// Axial pitch between notch centers, mm.
    pub notch_spacing: f64,
    /// Circumferential direction of the cuts, degrees from the bend normal
    /// toward the binormal.
    pub notch_phase: f64,
    /// Backbone curvature, 1/mm. Zero is straight.
    pub bend_curvature: f64,
}

impl Default for NtcrSpec {
    fn default() -> Self {
        Self {
            outer_diameter: 3.5,
            wall_thickness: 0.3,
            tube_length: 45.0,
            notch_count: 16,
            notch_width: 1.5,
            notch_depth: 2.8,
            notch_spacing: 2.5,
            notch_phase: 0.0,
            bend_curvature: 0.0,
        }
    }
}

/// Tube coordinates of a point: arc length and cross-section offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeCoords {
    pub s: f64,
    pub y: f64,
    pub z: f64,
}

impl TubeCoords {
    pub fn radius(&self) -> f64 {
        self.y.hypot(self.z)
    }
}

/// Which patch of the tube boundary a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfacePatch {
    OuterWall,
    CutFace,
    CutFloor,
    EndCap,
}

impl NtcrSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("ntcr: {m}")));
        let finite = [
            self.outer_diameter,
            self.wall_thickness,
            self.tube_length,
            self.notch_width,
            self.notch_depth,
            self.notch_spacing,
            self.notch_phase,
            self.bend_curvature,
        ];
        if !finite.iter().all(|v| v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if !(self.wall_thickness > 0.0 && self.outer_diameter > 2.0 * self.wall_thickness) {
            return bad("need outer_diameter > 2·wall_thickness > 0".into());
        }
        if !(self.tube_length > 0.0) {
            return bad("tube_length must be positive".into());
        }
        if self.notch_count > 0 {
            if !(self.notch_width > 0.0 && self.notch_width < self.notch_spacing) {
                return bad("need 0 < notch_width < notch_spacing".into());
            }
            if !(self.notch_depth > 0.0 && self.notch_depth < self.outer_diameter) {
                return bad("need 0 < notch_depth < outer_diameter".into());
            }
            let (first, _) = self.notch_window(0);
            let (_, last) = self.notch_window(self.notch_count as usize - 1);
            if first < 0.0 || last > self.tube_length {
                return bad(format!(
                    "notches span [{first:.3}, {last:.3}] mm, outside the {} mm tube",
                    self.tube_length
                ));
            }
        }
        if self.bend_curvature.abs() * self.outer_radius() >= 1.0 {
            return bad("bend radius must exceed the tube radius".into());
        }
        if self.bend_curvature.abs() * self.tube_length > PI {
            return bad("total bend angle must not exceed 180°".into());
        }
        Ok(())
    }

    pub fn outer_radius(&self) -> f64 {
        self.outer_diameter / 2.0
    }

    pub fn inner_radius(&self) -> f64 {
        self.outer_radius() - self.wall_thickness
    }

    /// Cut chord level `c`: material with `h > c` is removed inside a window.
    pub fn cut_level(&self) -> f64 {
        self.outer_radius() - self.notch_depth
    }

    /// Unit cut direction in `(y, z)`.
    pub fn cut_direction(&self) -> (f64, f64) {
        let p = self.notch_phase.to_radians();
        (p.cos(), p.sin())
    }

    pub fn cut_height(&self, y: f64, z: f64) -> f64 {
        let (cy, cz) = self.cut_direction();
        y * cy + z * cz
    }

    pub fn notch_center(&self, k: usize) -> f64 {
        let n = self.notch_count as f64;
        self.tube_length / 2.0 + (k as f64 - (n - 1.0) / 2.0) * self.notch_spacing
    }

    /// Axial window `[start, end]` of notch `k`.
    pub fn notch_window(&self, k: usize) -> (f64, f64) {
        let c = self.notch_center(k);
        (c - self.notch_width / 2.0, c + self.notch_width / 2.0)
    }

    pub fn notch_windows(&self) -> Vec<(f64, f64)> {
        (0..self.notch_count as usize)
            .map(|k| self.notch_window(k))
            .collect()
    }

    /// Index of the notch whose window contains `s`, if any.
    pub fn notch_at(&self, s: f64) -> Option<usize> {
        if self.notch_count == 0 {
            return None;
        }
        let n = self.notch_count as f64;
        let k = ((s - self.tube_length / 2.0) / self.notch_spacing + (n - 1.0) / 2.0).round();
        if k < 0.0 || k >= n {
            return None;
        }
        let (a, b) = self.notch_window(k as usize);
        (s >= a && s <= b).then_some(k as usize)
    }

    /// Point strictly inside a notch void (removed material region,
    /// including the tube's interior there).
    pub fn in_void(&self, tc: &TubeCoords) -> bool {
        match self.notch_at(tc.s) {
            Some(k) => {
                let (a, b) = self.notch_window(k);
                tc.s > a
                    && tc.s < b
                    && self.cut_height(tc.y, tc.z) > self.cut_level()
                    && tc.radius() < self.outer_radius()
            }
            None => false,
        }
    }

    /// Point inside the tube material.
    pub fn in_solid(&self, tc: &TubeCoords) -> bool {
        let r = tc.radius();
        if tc.s < 0.0 || tc.s > self.tube_length {
            return false;
        }
        if r < self.inner_radius() || r > self.outer_radius() {
            return false;
        }
        match self.notch_at(tc.s) {
            Some(_) => self.cut_height(tc.y, tc.z) <= self.cut_level(),
            None => true,
        }
    }

    /// Backbone point, unit tangent and unit in-plane normal at arc length `s`.
    pub fn frame_at(&self, s: f64) -> (Point3, Vec3, Vec3) {
        let base = Point3::new(-self.tube_length / 2.0, 0.0, 0.0);
        let k = self.bend_curvature;
        if k == 0.0 {
            return (base + Vec3::new(s, 0.0, 0.0), Vec3::x(), Vec3::y());
        }
        let a = k * s;
        let (sn, cs) = a.sin_cos();
        let c = base + Vec3::new(sn / k, (1.0 - cs) / k, 0.0);
        (c, Vec3::new(cs, sn, 0.0), Vec3::new(-sn, cs, 0.0))
    }

    pub fn to_world(&self, tc: &TubeCoords) -> Point3 {
        let (c, _, n) = self.frame_at(tc.s);
        c + n * tc.y + Vec3::z() * tc.z
    }

    /// Inverse of [`NtcrSpec::to_world`]. Exact for any point whose offset
    /// from the backbone is smaller than the bend radius.
    pub fn to_tube(&self, p: &Point3) -> TubeCoords {
        let half = self.tube_length / 2.0;
        let k = self.bend_curvature;
        if k == 0.0 {
            return TubeCoords {
                s: p.x + half,
                y: p.y,
                z: p.z,
            };
        }
        // Center of curvature at base + (0, 1/k); (p − C)·k = (1 − y·k)(sin ks, −cos ks).
        let vx = (p.x + half) * k;
        let vy = (p.y - 1.0 / k) * k;
        let phi = vx.atan2(-vy);
        let rho = vx.hypot(vy);
        TubeCoords {
            s: phi / k,
            y: (1.0 - rho) / k,
            z: p.z,
        }
    }

    /// Outward unit normal of the wall at tube coordinates with radius > 0.
    fn radial_normal(&self, s: f64, y: f64, z: f64) -> Vec3 {
        let (_, _, n) = self.frame_at(s);
        let r = y.hypot(z);
        (n * (y / r) + Vec3::z() * (z / r)).normalize()
    }

    /// Axis-aligned world bounds of the tube.
    pub fn bounds(&self) -> (Point3, Point3) {
        let r = self.outer_radius();
        let steps = 512;
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..=steps {
            let (c, _, _) = self.frame_at(self.tube_length * i as f64 / steps as f64);
            lo = lo.inf(&c);
            hi = hi.sup(&c);
        }
        let pad = Vec3::repeat(r);
        (lo - pad, hi + pad)
    }

    fn removed_wall_area_per_notch(&self) -> f64 {
        let r = self.outer_radius();
        let alpha = (self.cut_level() / r).clamp(-1.0, 1.0).acos();
        let phi = self.notch_phase.to_radians();
        self.notch_width * r * (2.0 * alpha - 2.0 * self.bend_curvature * r * phi.cos() * alpha.sin())
    }

    fn face_area(&self) -> f64 {
        segment_area(self.outer_radius(), self.cut_level())
            - segment_area(self.inner_radius(), self.cut_level())
    }

    /// Half-extents `[g_in, g_out]` of the cut floor along the chord.
    fn floor_extent(&self) -> (f64, f64) {
        let c = self.cut_level();
        let g_out = (self.outer_radius().powi(2) - c * c).max(0.0).sqrt();
        let g_in = (self.inner_radius().powi(2) - c * c).max(0.0).sqrt();
        (g_in, g_out)
    }

    fn floor_area(&self) -> f64 {
        let (g_in, g_out) = self.floor_extent();
        let (cy, _) = self.cut_direction();
        self.notch_width * (1.0 - self.bend_curvature * self.cut_level() * cy) * 2.0 * (g_out - g_in)
    }

    fn cap_area(&self) -> f64 {
        PI * (self.outer_radius().powi(2) - self.inner_radius().powi(2))
    }

    /// Area of each sampled patch: outer wall, cut faces, cut floors, end
    /// caps.
    pub fn patch_areas(&self) -> [(SurfacePatch, f64); 4] {
        let n = self.notch_count as f64;
        let r = self.outer_radius();
        [
            (
                SurfacePatch::OuterWall,
                2.0 * PI * r * self.tube_length - n * self.removed_wall_area_per_notch(),
            ),
            (SurfacePatch::CutFace, 2.0 * n * self.face_area()),
            (SurfacePatch::CutFloor, n * self.floor_area()),
            (SurfacePatch::EndCap, 2.0 * self.cap_area()),
        ]
    }

    pub fn surface_area(&self) -> f64 {
        self.patch_areas().iter().map(|(_, a)| a).sum()
    }

    /// Distance from `p` to the sampled boundary (outer wall, cut faces,
    /// cut floors, end caps), evaluated in tube coordinates. Exact for a
    /// straight tube; for a bent one the axial metric is treated as flat,
    /// which is accurate to `O(κ·R)`.
    pub fn surface_distance(&self, p: &Point3) -> f64 {
        let tc = self.to_tube(p);
        let (s, y, z) = (tc.s, tc.y, tc.z);
        let r_out = self.outer_radius();
        let r_in = self.inner_radius();
        let c = self.cut_level();
        let rho = tc.radius();
        let l = self.tube_length;
        let phi = self.notch_phase.to_radians();
        let theta = z.atan2(y);
        let windows = self.notch_windows();

        let mut best = f64::INFINITY;
        let mut consider = |d: f64| best = best.min(d);

        // Outer wall: full rings between windows, partial arcs inside them.
        let mut start = 0.0;
        for &(a, b) in &windows {
            consider(interval_distance(s, start, a).hypot(rho - r_out));
            start = b;
        }
        consider(interval_distance(s, start, l).hypot(rho - r_out));
        let alpha = (c / r_out).clamp(-1.0, 1.0).acos();
        let kept_arc = arc_distance(rho, theta, r_out, phi + PI, PI - alpha);

        let face_2d = face_region_distance(y, z, self, r_in, r_out, c);
        let (g_in, g_out) = self.floor_extent();
        let (cy, cz) = self.cut_direction();
        let h = y * cy + z * cz;
        let g = -y * cz + z * cy;
        let dg = interval_distance(g.abs(), g_in, g_out);
        for &(a, b) in &windows {
            let ds = interval_distance(s, a, b);
            consider(ds.hypot(kept_arc));
            consider((s - a).hypot(face_2d));
            consider((s - b).hypot(face_2d));
            if g_out > g_in {
                consider((ds.hypot(h - c)).hypot(dg));
            }
        }

        let d_ring = interval_distance(rho, r_in, r_out);
        consider(s.abs().hypot(d_ring));
        consider((s - l).abs().hypot(d_ring));
        best
    }

    /// Area-uniform samples of the tube boundary with outward normals.
    ///
    /// `density` is in points per mm²; each patch receives
    /// `round(density × area)` points. Sampling is deterministic.
    pub fn sample_surface(&self, density: f64) -> Result<PointCloud> {
        self.sample_surface_seeded(density, SAMPLER_SEED)
    }

    pub fn sample_surface_seeded(&self, density: f64, seed: u64) -> Result<PointCloud> {
        self.validate()?;
        if !(density > 0.0 && density.is_finite()) {
            return Err(Error::invalid("sampling density must be positive"));
        }
        let counts: Vec<(SurfacePatch, usize)> = self
            .patch_areas()
            .iter()
            .map(|&(p, a)| (p, (density * a).round() as usize))
            .collect();
        let total: usize = counts.iter().map(|(_, n)| n).sum();
        if total < MIN_REFERENCE_POINTS {
            return Err(Error::SparseReference {
                count: total,
                min: MIN_REFERENCE_POINTS,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(total);
        let mut normals = Vec::with_capacity(total);
        for (patch, n) in counts {
            for _ in 0..n {
                let (tc, normal) = self.sample_patch(patch, &mut rng);
                points.push(self.to_world(&tc));
                normals.push(normal);
            }
        }
        PointCloud::with_attributes(points, None, Some(normals), BASE_FRAME)
    }

    fn sample_patch(&self, patch: SurfacePatch, rng: &mut ChaCha8Rng) -> (TubeCoords, Vec3) {
        let r_out = self.outer_radius();
        let r_in = self.inner_radius();
        let c = self.cut_level();
        let k = self.bend_curvature;
        let l = self.tube_length;
        let (cy, cz) = self.cut_direction();
        // Area element on an offset surface scales by (1 − κ·y).
        let metric_max = 1.0 + k.abs() * r_out;
        let accept_metric =
            |rng: &mut ChaCha8Rng, y: f64| rng.random::<f64>() * metric_max <= 1.0 - k * y;
        let n_notch = self.notch_count.max(1) as usize;
        match patch {
            SurfacePatch::OuterWall => loop {
                let s = rng.random::<f64>() * l;
                let th = rng.random::<f64>() * 2.0 * PI;
                let (y, z) = (r_out * th.cos(), r_out * th.sin());
                if !accept_metric(rng, y) {
                    continue;
                }
                if self.notch_at(s).is_some() && self.cut_height(y, z) > c {
                    continue;
                }
                let tc = TubeCoords { s, y, z };
                return (tc, self.radial_normal(s, y, z));
            },
            SurfacePatch::CutFace => loop {
                let kk = rng.random_range(0..n_notch);
                let (a, b) = self.notch_window(kk);
                let left = rng.random::<bool>();
                let rr = (r_in * r_in + rng.random::<f64>() * (r_out * r_out - r_in * r_in)).sqrt();
                let th = rng.random::<f64>() * 2.0 * PI;
                let (y, z) = (rr * th.cos(), rr * th.sin());
                if self.cut_height(y, z) < c {
                    continue;
                }
                let s = if left { a } else { b };
                let (_, t, _) = self.frame_at(s);
                let normal = if left { t } else { -t };
                return (TubeCoords { s, y, z }, normal);
            },
            SurfacePatch::CutFloor => loop {
                let kk = rng.random_range(0..n_notch);
                let (a, b) = self.notch_window(kk);
                let s = a + rng.random::<f64>() * (b - a);
                let (g_in, g_out) = self.floor_extent();
                let mag = g_in + rng.random::<f64>() * (g_out - g_in);
                let g = if rng.random::<bool>() { mag } else { -mag };
                let (y, z) = (c * cy - g * cz, c * cz + g * cy);
                if !accept_metric(rng, y) {
                    continue;
                }
                let (_, _, n) = self.frame_at(s);
                let normal = (n * cy + Vec3::z() * cz).normalize();
                return (TubeCoords { s, y, z }, normal);
            },
            SurfacePatch::EndCap => {
                let far = rng.random::<bool>();
                let rr = (r_in * r_in + rng.random::<f64>() * (r_out * r_out - r_in * r_in)).sqrt();
                let th = rng.random::<f64>() * 2.0 * PI;
                let s = if far { l } else { 0.0 };
                let (_, t, _) = self.frame_at(s);
                let normal = if far { t } else { -t };
                (
                    TubeCoords {
                        s,
                        y: rr * th.cos(),
                        z: rr * th.sin(),
                    },
                    normal,
                )
            }
        }
    }
}

/// `sample_ntcr_surface`: reference cloud of the predefined geometry.
pub fn sample_ntcr_surface(spec: &NtcrSpec, density: f64) -> Result<PointCloud> {
    spec.sample_surface(density)
}

/// Area of the part of a disk of radius `r` with `h > c`.
fn segment_area(r: f64, c: f64) -> f64 {
    if c >= r {
        0.0
    } else if c <= -r {
        PI * r * r
    } else {
        r * r * (c / r).acos() - c * (r * r - c * c).sqrt()
    }
}

fn interval_distance(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        0.0
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Distance from the 2D point `(rho, theta)` (polar) to the arc of radius
/// `r` centered at angle `center` with half-width `half` radians.
fn arc_distance(rho: f64, theta: f64, r: f64, center: f64, half: f64) -> f64 {
    if half <= 0.0 {
        return f64::INFINITY;
    }
    if wrap_angle(theta - center).abs() <= half || half >= PI {
        return (rho - r).abs();
    }
    let (py, pz) = (rho * theta.cos(), rho * theta.sin());
    [center - half, center + half]
        .iter()
        .map(|&a| (py - r * a.cos()).hypot(pz - r * a.sin()))
        .fold(f64::INFINITY, f64::min)
}

/// 2D distance from `(y, z)` to the cut-face region
/// `{r_in ≤ r ≤ r_out, h ≥ c}`.
fn face_region_distance(y: f64, z: f64, spec: &NtcrSpec, r_in: f64, r_out: f64, c: f64) -> f64 {
    let rho = y.hypot(z);
    let h = spec.cut_height(y, z);
    if rho >= r_in && rho <= r_out && h >= c {
        return 0.0;
    }
    let phi = spec.notch_phase.to_radians();
    let theta = z.atan2(y);
    let mut best = f64::INFINITY;
    for r in [r_in, r_out] {
        let alpha = (c / r).clamp(-1.0, 1.0).acos();
        best = best.min(arc_distance(rho, theta, r, phi, alpha));
    }
    // Chord segments on h = c between the two circles.
    let (cy, cz) = spec.cut_direction();
    let g = -y * cz + z * cy;
    let (g_in, g_out) = spec.floor_extent();
    if g_out > g_in {
        let dg = interval_distance(g.abs(), g_in, g_out);
        best = best.min((h - c).hypot(dg));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid_and_fits_sixteen_notches() {
        let s = NtcrSpec::default();
        s.validate().unwrap();
        assert_eq!(s.notch_windows().len(), 16);
        let w = s.notch_windows();
        assert!(w[0].0 > 0.0 && w[15].1 < s.tube_length);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let base = NtcrSpec::default();
        for bad in [
            NtcrSpec { wall_thickness: 2.0, ..base },
            NtcrSpec { notch_width: 3.0, ..base },
            NtcrSpec { notch_depth: 3.6, ..base },
            NtcrSpec { tube_length: 30.0, ..base },
            NtcrSpec { bend_curvature: 0.6, ..base },
            NtcrSpec { bend_curvature: 0.1, ..base },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        NtcrSpec { notch_count: 0, ..base }.validate().unwrap();
    }

    #[test]
    fn tube_coordinates_round_trip() {
        for k in [0.0, 0.02, -0.03] {
            let spec = NtcrSpec { bend_curvature: k, ..NtcrSpec::default() };
            for &(s, y, z) in &[(0.0, 0.0, 0.0), (10.0, 1.2, -0.4), (44.0, -1.7, 0.3)] {
                let tc = TubeCoords { s, y, z };
                let back = spec.to_tube(&spec.to_world(&tc));
                assert!((back.s - s).abs() < 1e-9 && (back.y - y).abs() < 1e-9 && (back.z - z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn segment_area_limits() {
        assert!((segment_area(2.0, 0.0) - PI * 2.0).abs() < 1e-12);
        assert_eq!(segment_area(1.0, 1.5), 0.0);
        assert!((segment_area(1.0, -1.5) - PI).abs() < 1e-12);
    }

    #[test]
    fn sampled_points_have_near_zero_surface_distance() {
        for k in [0.0, 0.01] {
            let spec = NtcrSpec { bend_curvature: k, ..NtcrSpec::default() };
            let cloud = spec.sample_surface(20.0).unwrap();
            let worst = cloud
                .points()
                .iter()
                .map(|p| spec.surface_distance(p))
                .fold(0.0, f64::max);
            assert!(worst < 1e-9, "curvature {k}: {worst}");
        }
    }

    #[test]
    fn surface_distance_of_offset_points() {
        let spec = NtcrSpec { notch_count: 0, ..NtcrSpec::default() };
        // Straight plain tube: off-wall points far from the caps.
        let p = Point3::new(0.0, 0.0, 3.0);
        assert!((spec.surface_distance(&p) - 1.25).abs() < 1e-12);
        let axis = Point3::new(0.0, 0.0, 0.0);
        assert!((spec.surface_distance(&axis) - 1.75).abs() < 1e-12);
    }
}
