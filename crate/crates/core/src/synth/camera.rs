//! Virtual stereo depth cameras.
//!
//! A rendered pixel stores the camera-frame `Z` of the nearest hit. The
//! stereo pipeline is imitated by rounding the disparity `b·f/Z` to the
//! quantization step and then adding zero-mean Gaussian noise with standard
//! deviation `depth_noise_fraction·Z`. Noise for pixel `i` comes from a
//! ChaCha stream keyed on `(seed, i)`, so output does not depend on how rows
//! are scheduled.
//!
//! `extrinsic_error` models imperfect rig calibration: the true
//! camera-from-world pose is `extrinsic_error ∘ pose`, while the depth map
//! carries the nominal pose only.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::projection::{CameraIntrinsics, DepthMap, INVALID_DEPTH};

use super::scene::{RayTarget, SurfaceLabel};

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualCamera {
    pub intrinsics: CameraIntrinsics,
    /// Nominal camera-from-world.
    pub pose: RigidTransform,
    pub width: usize,
    pub height: usize,
    /// mm
    pub stereo_baseline: f64,
    pub depth_noise_fraction: f64,
    /// Disparity rounding step in pixels; zero disables rounding.
    pub disparity_quantization: f64,
    /// Camera-frame calibration error applied on top of `pose`.
    pub extrinsic_error: RigidTransform,
}

impl Default for VirtualCamera {
    fn default() -> Self {
        let (w, h) = (640, 480);
        Self {
            intrinsics: CameraIntrinsics::centered(380.0, w, h),
            pose: RigidTransform::identity(),
            width: w,
            height: h,
            stereo_baseline: 18.0,
            depth_noise_fraction: 0.004,
            disparity_quantization: 0.125,
            extrinsic_error: RigidTransform::identity(),
        }
    }
}

impl VirtualCamera {
    /// Noise-free camera on the `−z` axis at `standoff`, looking at the
    /// origin.
    pub fn looking_at_origin(standoff: f64, width: usize, height: usize, focal: f64) -> Self {
        Self {
            intrinsics: CameraIntrinsics::centered(focal, width, height),
            pose: RigidTransform::from_translation(Vec3::new(0.0, 0.0, standoff)),
            width,
            height,
            depth_noise_fraction: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        if !(self.stereo_baseline > 0.0) {
            return Err(Error::invalid("stereo baseline must be positive"));
        }
        if !(self.depth_noise_fraction >= 0.0 && self.depth_noise_fraction.is_finite()) {
            return Err(Error::invalid("depth noise fraction must be non-negative"));
        }
        if !(self.disparity_quantization >= 0.0 && self.disparity_quantization.is_finite()) {
            return Err(Error::invalid("disparity quantization must be non-negative"));
        }
        self.intrinsics.validate(self.width, self.height)
    }

    /// Nominal world-from-camera, as stored in rendered depth maps.
    pub fn world_from_camera(&self) -> RigidTransform {
        self.pose.inverse()
    }

    /// Depth spacing between adjacent disparity levels at depth `z`.
    pub fn depth_quantization_step(&self, z: f64) -> f64 {
        z * z * self.disparity_quantization / (self.stereo_baseline * self.intrinsics.fx)
    }

    fn quantize(&self, z: f64) -> f64 {
        let q = self.disparity_quantization;
        if q == 0.0 {
            return z;
        }
        let bf = self.stereo_baseline * self.intrinsics.fx;
        let d = (bf / z / q).round() * q;
        if d <= 0.0 {
            INVALID_DEPTH
        } else {
            bf / d
        }
    }
}

/// Two cameras facing each other through the origin, each `standoff` away
/// along `z`. The second is the first rotated 180° about the world `y` axis.
/// Calibration error is copied to both, expressed in each camera's frame.
pub fn make_opposed_rig(standoff: f64, template: &VirtualCamera) -> Result<[VirtualCamera; 2]> {
    if !(standoff > 0.0 && standoff.is_finite()) {
        return Err(Error::invalid("rig standoff must be positive"));
    }
    let shift = RigidTransform::from_translation(Vec3::new(0.0, 0.0, standoff));
    let flip = RigidTransform::from_axis_angle(Vec3::y(), std::f64::consts::PI, Vec3::zeros())?;
    let a = VirtualCamera {
        pose: shift,
        ..template.clone()
    };
    let b = VirtualCamera {
        pose: shift.compose(&flip),
        ..template.clone()
    };
    Ok([a, b])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderStatus {
    Ok,
    /// No ray hit anything; the map is all invalid.
    EmptyFrustum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Apply the camera's Gaussian depth noise. Quantization always applies.
    pub noise: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { noise: true }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub map: DepthMap,
    /// Per-pixel [`SurfaceLabel`] as `u8`, row-major.
    pub labels: Vec<u8>,
    pub status: RenderStatus,
}

/// Ray-casts `target` through every pixel of `camera`.
pub fn render_depth(
    target: &dyn RayTarget,
    camera: &VirtualCamera,
    seed: u64,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let true_world_from_cam = camera.extrinsic_error.compose(&camera.pose).inverse();
    let origin = true_world_from_cam.apply(&crate::geometry::Point3::origin());
    let sigma = if opts.noise { camera.depth_noise_fraction } else { 0.0 };

    let mut depth = vec![INVALID_DEPTH; w * h];
    let mut labels = vec![SurfaceLabel::None as u8; w * h];
    depth
        .par_chunks_mut(w)
        .zip(labels.par_chunks_mut(w))
        .enumerate()
        .for_each(|(v, (drow, lrow))| {
            for u in 0..w {
                let dir = true_world_from_cam.apply_vector(&camera.intrinsics.ray(u as f64, v as f64));
                let Some((t, label)) = target.intersect(&origin, &dir) else {
                    continue;
                };
                // Camera rays have unit z, so the ray parameter is the depth.
                let mut z = camera.quantize(t);
                if z != INVALID_DEPTH && sigma > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream((v * w + u) as u64);
                    let e: f64 = StandardNormal.sample(&mut rng);
                    z *= 1.0 + sigma * e;
                }
                if z > 0.0 && z.is_finite() {
                    drow[u] = z;
                    lrow[u] = label as u8;
                }
            }
        });

    let map = DepthMap::new(w, h, depth, camera.intrinsics, camera.world_from_camera())?;
    let status = if map.valid_count() == 0 {
        warn!("rendered depth map is empty: nothing in the camera frustum");
        RenderStatus::EmptyFrustum
    } else {
        RenderStatus::Ok
    };
    Ok(RenderOutput { map, labels, status })
}
