use ntcr_recon::config::PipelineConfig;
use ntcr_recon::geometry::{apply_transform, BASE_FRAME};
use ntcr_recon::pipeline::{filter_capture, project, synthesize};
use ntcr_recon::registration::{icp_align, relocate_to_reference, IcpParams, RelocationParams};
use ntcr_recon::synth::NtcrSpec;
use ntcr_recon::{Point3, PointCloud, RigidTransform, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn rms_to_surface(cloud: &PointCloud, spec: &NtcrSpec) -> f64 {
    let s: f64 = cloud.points().iter().map(|p| spec.surface_distance(p).powi(2)).sum();
    (s / cloud.len() as f64).sqrt()
}

#[test]
fn half_cloud_aligns_to_the_full_reference() {
    let spec = NtcrSpec::default();
    let reference = spec.sample_surface(200.0).unwrap();
    // The camera-a side only, independently sampled and jittered.
    let sigma = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise = Normal::new(0.0, sigma).unwrap();
    let half: Vec<Point3> = spec
        .sample_surface_seeded(20.0, 99)
        .unwrap()
        .points()
        .iter()
        .filter(|p| p.z < 0.0)
        .map(|p| p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
        .collect();
    let half = PointCloud::new(half, BASE_FRAME).unwrap();
    let nudge = RigidTransform::from_axis_angle(Vec3::new(1.0, 1.0, 0.0).normalize(), 1f64.to_radians(), Vec3::new(0.2, -0.1, 0.15)).unwrap();
    let moved = apply_transform(&half, &nudge, BASE_FRAME);
    let r = icp_align(&moved, &reference, &IcpParams::default()).unwrap();
    assert!(r.converged);
    assert!(r.rms_residual <= 2.0 * sigma, "rms {}", r.rms_residual);
}

#[test]
fn capture_in_the_reference_pose_stays_put() {
    let spec = NtcrSpec::default();
    let capture = spec.sample_surface_seeded(30.0, 5).unwrap();
    let r = relocate_to_reference(&capture, &spec, &RelocationParams::default()).unwrap();
    assert!(r.icp.transform.rotation_angle().to_degrees() <= 0.1);
    assert!(r.fits_model);
}

#[test]
fn relocation_brings_each_capture_closer_to_the_tube() {
    let cfg = PipelineConfig::default();
    let maps = synthesize(&cfg).unwrap();
    let params = cfg.icp.relocation_params();
    for map in &maps {
        let f = filter_capture(&project(map), &cfg).unwrap();
        let before = rms_to_surface(&f.cloud, &cfg.ntcr);
        let r = relocate_to_reference(&f.cloud, &cfg.ntcr, &params).unwrap();
        let after = rms_to_surface(&r.cloud, &cfg.ntcr);
        assert!(after < before, "{after} !< {before}");
        assert!(r.fits_model);
    }
}

#[test]
fn straight_capture_does_not_fit_a_bent_model() {
    let straight = NtcrSpec::default();
    let bent = NtcrSpec {
        bend_curvature: 0.06,
        ..straight
    };
    let capture = straight.sample_surface_seeded(10.0, 8).unwrap();
    let params = RelocationParams {
        reference_density: 100.0,
        rms_threshold: 0.1,
        ..RelocationParams::default()
    };
    let r = relocate_to_reference(&capture, &bent, &params).unwrap();
    assert!(!r.fits_model, "rms {} converged {}", r.icp.rms_residual, r.icp.converged);
    let same = relocate_to_reference(&capture, &straight, &params).unwrap();
    assert!(same.fits_model, "rms {}", same.icp.rms_residual);
}

#[test]
fn trace_table_lists_every_iteration() {
    let spec = NtcrSpec::default();
    let reference = spec.sample_surface(50.0).unwrap();
    let shift = RigidTransform::from_axis_angle(Vec3::z(), 0.02, Vec3::new(0.1, 0.0, 0.0)).unwrap();
    let r = icp_align(&apply_transform(&reference, &shift, BASE_FRAME), &reference, &IcpParams::default()).unwrap();
    let t = r.trace_table();
    assert_eq!(t.rows.len(), r.residual_trace.len());
    assert_eq!(t.rows.len(), r.iterations_used + 1);
    for w in r.residual_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-9);
    }
}
