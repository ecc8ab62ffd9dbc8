//! Point-to-point ICP against the reference tube geometry.
//!
//! The residual is a truncated RMS over all target points,
//! `E = sqrt(Σ min(dᵢ², D²) / n)` with `D` the rejection distance. Pairs
//! beyond `D` do not enter the fit but still count at `D²`, which makes `E`
//! non-increasing from one iteration to the next: the closed-form fit can
//! only lower the inlier sum, and re-pairing can only shorten each
//! distance.

use nalgebra::{Matrix3, SVD};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{apply_transform, Point3, PointCloud, RigidTransform, Vec3};
use crate::io::csv::Table;
use crate::kdtree::{KdTree, Neighbor};
use crate::synth::NtcrSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once the residual drops by less than this, mm.
    pub convergence_eps: f64,
    /// Pairs farther apart are rejected, mm.
    pub max_correspondence_distance: f64,
    pub initial_guess: RigidTransform,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_eps: 1e-4,
            max_correspondence_distance: 2.0,
            initial_guess: RigidTransform::identity(),
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("ICP needs at least one iteration"));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(Error::invalid("ICP convergence eps must be positive"));
        }
        if !(self.max_correspondence_distance > 0.0) {
            return Err(Error::invalid("ICP correspondence distance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps the original target into the reference frame.
    pub transform: RigidTransform,
    /// Truncated RMS after the last iteration, mm.
    pub rms_residual: f64,
    /// RMS over accepted pairs only, mm.
    pub inlier_rms: f64,
    pub inlier_fraction: f64,
    pub iterations_used: usize,
    /// Residual before the first iteration, then after each one.
    pub residual_trace: Vec<f64>,
    pub converged: bool,
}

impl IcpResult {
    /// The residual trace, one row per iteration (0 is the initial pose).
    pub fn trace_table(&self) -> Table {
        let mut t = Table::new(["iteration", "rms_mm"])
            .note(format!("converged {}  inlier fraction {}", self.converged, self.inlier_fraction));
        for (i, r) in self.residual_trace.iter().enumerate() {
            t.push([i.to_string(), r.to_string()]);
        }
        t
    }
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]`, via the SVD of
/// the cross-covariance with a determinant sign fix.
pub fn solve_rigid(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform> {
    solve_rigid_at(src, dst, 0)
}

fn solve_rigid_at(src: &[Point3], dst: &[Point3], iteration: usize) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::invalid("rigid fit needs paired point lists"));
    }
    if src.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            iteration,
            count: src.len(),
        });
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let h = src
        .iter()
        .zip(dst)
        .fold(Matrix3::zeros(), |acc, (s, d)| acc + (s.coords - cs) * (d.coords - cd).transpose());
    // Singular values come sorted in descending order.
    let svd = SVD::new(h, true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let sv = &svd.singular_values;
    // Rank ≤ 1 (collinear points): rotation about the line is free.
    if !(sv[1] > 1e-12 * sv[0].max(f64::MIN_POSITIVE)) {
        let axis = u.column(0);
        return Err(Error::DegenerateCovariance {
            iteration,
            axis: [axis[0], axis[1], axis[2]],
        });
    }
    let v = vt.transpose();
    let mut fix = Matrix3::identity();
    fix[(2, 2)] = (v * u.transpose()).determinant().signum();
    let r = v * fix * u.transpose();
    let r = orthonormalize(r);
    let t = cd - r * cs;
    RigidTransform::new(r, t)
}

/// Nearest rotation by SVD; removes round-off drift.
fn orthonormalize(r: Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(r, true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut out = u * vt;
    if out.determinant() < 0.0 {
        let mut f = Matrix3::identity();
        f[(2, 2)] = -1.0;
        out = u * f * vt;
    }
    out
}

struct Pairing {
    truncated_rms: f64,
    inlier_rms: f64,
    src: Vec<Point3>,
    dst: Vec<Point3>,
}

fn pair(points: &[Point3], tree: &KdTree, max_d: f64) -> Pairing {
    let hits: Vec<Option<Neighbor>> = points.par_iter().map(|p| tree.nearest_within(p, max_d)).collect();
    let cap = max_d * max_d;
    let mut sum = 0.0;
    let mut inlier_sum = 0.0;
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (p, hit) in points.iter().zip(&hits) {
        match hit {
            Some(nb) if nb.distance <= max_d => {
                let d = nb.distance;
                sum += d * d;
                inlier_sum += d * d;
                src.push(*p);
                dst.push(tree.points()[nb.index]);
            }
            _ => sum += cap,
        }
    }
    let n = points.len().max(1) as f64;
    Pairing {
        truncated_rms: (sum / n).sqrt(),
        inlier_rms: if src.is_empty() {
            f64::INFINITY
        } else {
            (inlier_sum / src.len() as f64).sqrt()
        },
        src,
        dst,
    }
}

/// Aligns `target` onto `reference`.
pub fn icp_align(target: &PointCloud, reference: &PointCloud, params: &IcpParams) -> Result<IcpResult> {
    let tree = KdTree::build(reference)?;
    icp_align_to_tree(target, &tree, params)
}

/// [`icp_align`] with a prebuilt reference tree. The reference never moves,
/// so one tree serves every iteration.
pub fn icp_align_to_tree(target: &PointCloud, tree: &KdTree, params: &IcpParams) -> Result<IcpResult> {
    params.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let d = params.max_correspondence_distance;
    let mut transform = params.initial_guess;
    let mut current: Vec<Point3> = target.points().iter().map(|p| transform.apply(p)).collect();
    let mut pairing = pair(&current, tree, d);
    let mut trace = vec![pairing.truncated_rms];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=params.max_iterations {
        if pairing.src.len() < 3 {
            return Err(Error::TooFewCorrespondences {
                iteration: it,
                count: pairing.src.len(),
            });
        }
        let step = solve_rigid_at(&pairing.src, &pairing.dst, it)?;
        transform = step.compose(&transform);
        current = target.points().iter().map(|p| transform.apply(p)).collect();
        pairing = pair(&current, tree, d);
        iterations = it;
        let prev = *trace.last().expect("non-empty");
        trace.push(pairing.truncated_rms);
        if prev - pairing.truncated_rms < params.convergence_eps {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        transform,
        rms_residual: pairing.truncated_rms,
        inlier_rms: pairing.inlier_rms,
        inlier_fraction: pairing.src.len() as f64 / target.len() as f64,
        iterations_used: iterations,
        residual_trace: trace,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelocationParams {
    pub icp: IcpParams,
    /// Reference sampling density, points/mm².
    pub reference_density: f64,
    /// Largest final residual accepted as a model fit, mm.
    pub rms_threshold: f64,
}

impl Default for RelocationParams {
    fn default() -> Self {
        Self {
            icp: IcpParams::default(),
            reference_density: 200.0,
            rms_threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relocation {
    /// The capture moved onto the reference.
    pub cloud: PointCloud,
    pub icp: IcpResult,
    pub reference_points: usize,
    /// Converged with a residual under the threshold. False flags a capture
    /// that does not match the model.
    pub fits_model: bool,
}

/// Samples the reference tube from `spec` and moves `capture` onto it.
pub fn relocate_to_reference(
    capture: &PointCloud,
    spec: &NtcrSpec,
    params: &RelocationParams,
) -> Result<Relocation> {
    let reference = spec.sample_surface(params.reference_density)?;
    let tree = KdTree::build(&reference)?;
    relocate_with_tree(capture, &tree, params)
}

/// [`relocate_to_reference`] against an already sampled reference.
pub fn relocate_with_tree(capture: &PointCloud, tree: &KdTree, params: &RelocationParams) -> Result<Relocation> {
    if capture.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let icp = icp_align_to_tree(capture, tree, &params.icp)?;
    let cloud = apply_transform(capture, &icp.transform, capture.frame());
    let fits_model = icp.converged && icp.rms_residual <= params.rms_threshold;
    Ok(Relocation {
        cloud,
        icp,
        reference_points: tree.len(),
        fits_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BASE_FRAME;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point3::new(rng.random::<f64>() * 20.0 - 10.0, rng.random::<f64>() * 5.0, rng.random::<f64>() * 3.0))
            .collect()
    }

    proptest! {
        #[test]
        fn exact_pairs_recover_the_transform(
            rx in -180.0f64..180.0, ry in -89.0f64..89.0, rz in -180.0f64..180.0,
            tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -50.0f64..50.0, seed in 0u64..1000,
        ) {
            let t0 = RigidTransform::from_euler_deg(rx, ry, rz, Vec3::new(tx, ty, tz));
            let src = random_points(50, seed);
            let dst: Vec<Point3> = src.iter().map(|p| t0.apply(p)).collect();
            let t = solve_rigid(&src, &dst).unwrap();
            prop_assert!(t.compose(&t0.inverse()).rotation_angle() <= 1e-9);
            prop_assert!((t.translation() - t0.translation()).norm() <= 1e-9);
            prop_assert!((t.rotation().determinant() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn planar_and_reflected_inputs_give_proper_rotations() {
        let src: Vec<Point3> = random_points(30, 1).iter().map(|p| Point3::new(p.x, p.y, 0.0)).collect();
        let t0 = RigidTransform::from_euler_deg(10.0, 20.0, 30.0, Vec3::new(1.0, 0.0, 0.0));
        let dst: Vec<Point3> = src.iter().map(|p| t0.apply(p)).collect();
        let t = solve_rigid(&src, &dst).unwrap();
        assert!(t.compose(&t0.inverse()).rotation_angle() < 1e-9);
        // Mirror image: best proper rotation, never a reflection.
        let mirrored: Vec<Point3> = random_points(30, 2).iter().map(|p| Point3::new(-p.x, p.y, p.z)).collect();
        let t = solve_rigid(&random_points(30, 2), &mirrored).unwrap();
        assert!((t.rotation().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_name_the_free_axis() {
        let src: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        match solve_rigid(&src, &src) {
            Err(Error::DegenerateCovariance { axis, .. }) => assert!((axis[0].abs() - 1.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn self_alignment_is_immediate() {
        let c = PointCloud::new(random_points(500, 3), BASE_FRAME).unwrap();
        let r = icp_align(&c, &c, &IcpParams::default()).unwrap();
        assert_eq!(r.iterations_used, 1);
        assert!(r.converged);
        assert!(r.rms_residual < 1e-12);
        assert!(r.transform.rotation_angle() < 1e-12 && r.transform.translation().norm() < 1e-12);
    }

    #[test]
    fn far_apart_clouds_report_the_iteration() {
        let a = PointCloud::new(random_points(100, 4), BASE_FRAME).unwrap();
        let b = apply_transform(&a, &RigidTransform::from_translation(Vec3::new(100.0, 0.0, 0.0)), BASE_FRAME);
        assert!(matches!(
            icp_align(&b, &a, &IcpParams::default()),
            Err(Error::TooFewCorrespondences { iteration: 1, count: 0 })
        ));
    }

    #[test]
    fn recovers_a_known_perturbation_of_the_tube() {
        let spec = NtcrSpec::default();
        let reference = spec.sample_surface(20.0).unwrap();
        let t0 = RigidTransform::from_euler_deg(5.0, 5.0, 5.0, Vec3::new(1.0, 2.0, 3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let moved: Vec<Point3> = reference
            .points()
            .iter()
            .map(|p| t0.apply(p) + Vec3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        let target = PointCloud::new(moved, BASE_FRAME).unwrap();
        let params = IcpParams {
            max_correspondence_distance: 10.0,
            max_iterations: 200,
            convergence_eps: 1e-7,
            ..IcpParams::default()
        };
        let r = icp_align(&target, &reference, &params).unwrap();
        let err = r.transform.compose(&t0);
        assert!(err.rotation_angle().to_degrees() <= 0.5, "{}", err.rotation_angle().to_degrees());
        assert!(err.translation().norm() <= 0.05, "{}", err.translation().norm());
        for w in r.residual_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }
}
