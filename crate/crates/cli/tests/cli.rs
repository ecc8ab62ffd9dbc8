use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ntcr_recon::geometry::RigidTransform;
use ntcr_recon::io::{pgm, ply};
use ntcr_recon::metrics::lattice_cloud;
use ntcr_recon::pipeline::MANIFEST_FILE;
use ntcr_recon::projection::{CameraIntrinsics, DepthMap, INVALID_DEPTH};
use ntcr_recon::Point3;

fn ntcr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntcr-recon"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn pdc_value(csv: &str, key: &str) -> f64 {
    csv.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("{key} missing from\n{csv}"))
        .parse()
        .unwrap()
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn metrics_on_a_lattice_reports_uniform_density() {
    let tmp = tempfile::tempdir().unwrap();
    // One point per 0.5 mm voxel, the default PDC voxel size.
    let cloud = lattice_cloud(Point3::new(100.0, 100.0, 100.0), [8, 6, 5], 0.5);
    let p = tmp.path().join("lattice.ply");
    ply::save_cloud(&p, &cloud, ply::PlyFormat::Ascii).unwrap();
    let o = ntcr(tmp.path(), &["--out", "m", "metrics", "lattice.ply"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("m/pdc.csv")).unwrap();
    assert_eq!(pdc_value(&csv, "mean_density"), 1.0);
    assert_eq!(pdc_value(&csv, "std_density"), 0.0);
    assert_eq!(pdc_value(&csv, "voxels"), 240.0);
    // The lattice is nowhere near the notched band.
    assert!(stderr(&o).contains("skipping notch widths"), "{}", stderr(&o));
    assert!(!tmp.path().join("m/notches.csv").exists());
}

#[test]
fn project_of_an_all_invalid_map_warns_and_writes_an_empty_cloud() {
    let tmp = tempfile::tempdir().unwrap();
    let (w, h) = (8, 6);
    let map = DepthMap::new(
        w,
        h,
        vec![INVALID_DEPTH; w * h],
        CameraIntrinsics::centered(100.0, w, h),
        RigidTransform::identity(),
    )
    .unwrap();
    pgm::save_depth(&tmp.path().join("blank.pgm"), &map).unwrap();
    let o = ntcr(tmp.path(), &["--out", "p", "project", "blank.pgm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("no valid pixels"), "{}", stderr(&o));
    let cloud = ply::load_cloud(&tmp.path().join("p/raw_a.ply")).unwrap();
    assert!(cloud.is_empty());
}

#[test]
fn chained_subcommands_match_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ntcr(tmp.path(), &["--out", "whole", "--seed", "3", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for s in ["synth", "project", "filter", "register", "reconstruct", "metrics"] {
        let o = ntcr(tmp.path(), &["--out", "staged", "--seed", "3", s]);
        assert!(o.status.success(), "{s}: {}", stderr(&o));
    }
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    let mut compared = 0;
    for name in file_names(&whole) {
        // Timings and the run summary exist only for a full run.
        if name == MANIFEST_FILE || name == "summary.txt" {
            continue;
        }
        let a = fs::read(whole.join(&name)).unwrap();
        let b = fs::read(staged.join(&name)).unwrap_or_else(|_| panic!("{name} not produced by the chain"));
        assert!(a == b, "{name} differs");
        compared += 1;
    }
    // depth, cloud, SOR report and ICP trace per camera, aligned, mesh ×2,
    // pdc, notches, heatmap ×2.
    assert_eq!(compared, 15);
}

#[test]
fn flag_contradicting_the_config_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "[rig]\nseed = 11\n").unwrap();
    let o = ntcr(tmp.path(), &["--config", "c.toml", "--seed", "12", "--out", "x", "synth"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("--seed") && e.contains("rig.seed") && e.contains("c.toml"), "{e}");
    assert!(!tmp.path().join("x").exists());
    // Agreeing with the file is fine.
    let o = ntcr(tmp.path(), &["--config", "c.toml", "--seed", "11", "--print-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("seed = 11"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "[rig]\nsede = 11\n").unwrap();
    let o = ntcr(tmp.path(), &["--config", "c.toml", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));
}

#[test]
fn missing_input_fails_cleanly_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ntcr(
        tmp.path(),
        &["--out", "o", "--input", "nope_a.pgm", "--input", "nope_b.pgm", "run"],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope_a.pgm"), "{}", stderr(&o));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn printed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ntcr(tmp.path(), &["--seed", "5", "--no-icp", "--print-config"]);
    assert!(o.status.success());
    fs::write(tmp.path().join("dump.toml"), &o.stdout).unwrap();
    let o = ntcr(tmp.path(), &["--config", "dump.toml", "--print-config"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout), fs::read_to_string(tmp.path().join("dump.toml")).unwrap());
    let text = fs::read_to_string(tmp.path().join("dump.toml")).unwrap();
    assert!(text.contains("seed = 5") && text.contains("enabled = false"), "{text}");
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ntcr-recon"))
        .current_dir(tmp.path())
        .env("NTCR_THREADS", "zero")
        .arg("--print-config")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("NTCR_THREADS"));
}
