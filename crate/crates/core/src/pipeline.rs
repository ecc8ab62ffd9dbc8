//! Stage orchestration: capture, projection, filtering, relocation,
//! reconstruction and reporting.
//!
//! Each stage is a function on in-memory data whose output is rounded to
//! storage precision, so the CLI subcommands (which pass data through
//! files) and [`run_pipeline`] (which does not) produce identical bytes.
//!
//! Per camera the capture is filtered (SOR, box/color conditions, MLS) and
//! relocated onto the reference tube on its own; the two relocated sheets
//! are merged only afterwards. Each sheet gets normals facing its own
//! (relocated) camera.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::filtering::{conditional_filter, mls_smooth, sor_filter};
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::io::csv::Table;
use crate::io::{obj, pgm, ply};
use crate::kdtree::KdTree;
use crate::metrics::{compute_pdc, density_heatmap, measure_notches, Heatmap, NotchReport, PdcReport};
use crate::projection::{depth_to_cloud, merge_clouds, DepthMap};
use crate::registration::{relocate_with_tree, Relocation};
use crate::surface::{estimate_normals, poisson_reconstruct, PoissonOutcome};
use crate::synth::{render_depth, NtcrScene, RenderOptions, RenderStatus};

/// Stage names, in execution order.
pub const STAGES: [&str; 6] = ["synth", "project", "filter", "register", "reconstruct", "metrics"];

/// Camera tags used in file names.
pub const CAMERAS: [&str; 2] = ["a", "b"];

pub fn depth_file(cam: usize) -> String {
    format!("depth_{}.pgm", CAMERAS[cam])
}

pub fn raw_file(cam: usize) -> String {
    format!("raw_{}.ply", CAMERAS[cam])
}

pub fn cloud_file(cam: usize) -> String {
    format!("cloud_{}.ply", CAMERAS[cam])
}

pub fn sor_report_file(cam: usize) -> String {
    format!("sor_removed_{}.csv", CAMERAS[cam])
}

pub fn icp_trace_file(cam: usize) -> String {
    format!("icp_trace_{}.csv", CAMERAS[cam])
}

pub const ALIGNED_FILE: &str = "aligned.ply";
pub const MESH_PLY_FILE: &str = "mesh.ply";
pub const MESH_OBJ_FILE: &str = "mesh.obj";
pub const PDC_FILE: &str = "pdc.csv";
pub const NOTCH_FILE: &str = "notches.csv";
pub const HEATMAP_CSV_FILE: &str = "heatmap.csv";
pub const HEATMAP_PGM_FILE: &str = "heatmap.pgm";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub stage: &'static str,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub out_dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    /// Wall-clock seconds per completed stage.
    pub timings: Vec<(&'static str, f64)>,
}

impl Manifest {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["artifact", "stage", "file", "stage_seconds"]);
        for a in &self.artifacts {
            let secs = self
                .timings
                .iter()
                .find(|(s, _)| *s == a.stage)
                .map_or(String::new(), |(_, t)| format!("{t:.3}"));
            for f in &a.files {
                let name = f.file_name().map_or(f.display().to_string(), |n| n.to_string_lossy().into_owned());
                t.push([a.name.clone(), a.stage.to_string(), name, secs.clone()]);
            }
        }
        t
    }

    fn add(&mut self, name: &str, stage: &'static str, files: Vec<PathBuf>) {
        self.artifacts.push(Artifact {
            name: name.into(),
            stage,
            files,
        });
    }
}

/// A failed run: the stage, its cause, and what was written before it.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub source: Error,
    pub manifest: Manifest,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)?;
        if !self.manifest.artifacts.is_empty() {
            write!(f, " (completed artifacts:")?;
            for a in &self.manifest.artifacts {
                write!(f, " {}", a.name)?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Renders both cameras of the rig; maps are quantized as stored on disk.
pub fn synthesize(cfg: &PipelineConfig) -> Result<[DepthMap; 2]> {
    let rig = cfg.rig.cameras()?;
    let scene = NtcrScene::new(cfg.ntcr, cfg.rig.backdrop);
    let opts = RenderOptions { noise: cfg.rig.noise };
    let render = |i: usize| -> Result<DepthMap> {
        let out = render_depth(&scene, &rig[i], cfg.rig.seed.wrapping_add(i as u64), &opts)?;
        if out.status == RenderStatus::EmptyFrustum {
            warn!("camera {} sees nothing", CAMERAS[i]);
        }
        pgm::quantize_depth_map(&out.map)
    };
    Ok([render(0)?, render(1)?])
}

/// The configured input depth maps, checked to exist.
pub fn input_paths(cfg: &PipelineConfig) -> Result<Option<[PathBuf; 2]>> {
    let Some(inputs) = &cfg.io.inputs else {
        return Ok(None);
    };
    let [a, b]: [PathBuf; 2] = inputs
        .clone()
        .try_into()
        .map_err(|_| Error::Config("inputs must list exactly two depth maps".into()))?;
    for p in [&a, &b] {
        if !p.is_file() {
            return Err(Error::io(
                p.clone(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "input depth map not found"),
            ));
        }
    }
    Ok(Some([a, b]))
}

/// Depth maps from the configured inputs, or rendered when there are none.
pub fn acquire(cfg: &PipelineConfig) -> Result<[DepthMap; 2]> {
    match input_paths(cfg)? {
        Some([a, b]) => Ok([pgm::load_depth(&a)?, pgm::load_depth(&b)?]),
        None => synthesize(cfg),
    }
}

/// Camera centers in the base frame: from the input maps when given,
/// otherwise from the nominal rig.
pub fn viewpoints(cfg: &PipelineConfig) -> Result<[Point3; 2]> {
    match input_paths(cfg)? {
        Some([a, b]) => Ok([pgm::load_depth(&a)?.camera_center(), pgm::load_depth(&b)?.camera_center()]),
        None => {
            let rig = cfg.rig.cameras()?;
            Ok(rig.map(|c| c.world_from_camera().apply(&Point3::origin())))
        }
    }
}

pub fn project(map: &DepthMap) -> PointCloud {
    depth_to_cloud(map).to_storage_precision()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub cloud: PointCloud,
    pub input: usize,
    /// Input index and mean neighbor distance of each point SOR dropped.
    pub sor_removed: Vec<(usize, f64)>,
    pub conditional_removed: usize,
    pub mls_passed_through: usize,
}

impl FilterReport {
    pub fn sor_table(&self) -> Table {
        let mut t = Table::new(["index", "mean_neighbor_distance"]);
        for &(i, d) in &self.sor_removed {
            t.push([i.to_string(), d.to_string()]);
        }
        t
    }

    /// Writes the filtered cloud and the SOR report for camera `cam`.
    pub fn save(&self, out: &Path, cam: usize, format: ply::PlyFormat) -> Result<Vec<PathBuf>> {
        let (c, r) = (out.join(cloud_file(cam)), out.join(sor_report_file(cam)));
        ply::save_cloud(&c, &self.cloud, format)?;
        self.sor_table().save(&r)?;
        Ok(vec![c, r])
    }
}

/// SOR, then box/color conditions, then MLS.
pub fn filter_capture(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<FilterReport> {
    let sor = sor_filter(cloud, &cfg.filter.sor)?;
    let cond = conditional_filter(&sor.cloud, &cfg.filter.conditional.params(&cfg.ntcr));
    let mls = mls_smooth(&cond, &cfg.filter.mls)?;
    Ok(FilterReport {
        cloud: mls.cloud.to_storage_precision(),
        input: cloud.len(),
        sor_removed: sor.removed.iter().map(|&i| (i, sor.mean_distances[i])).collect(),
        conditional_removed: sor.cloud.len() - cond.len(),
        mls_passed_through: mls.passed_through,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Both sheets in the base frame with normals, camera `a` first.
    pub cloud: PointCloud,
    /// Per camera; `None` when relocation is disabled.
    pub relocations: [Option<Relocation>; 2],
    pub normals_excluded: [usize; 2],
}

impl Registration {
    /// Writes the merged cloud and, per relocated camera, its ICP trace.
    pub fn save(&self, out: &Path, format: ply::PlyFormat) -> Result<Vec<PathBuf>> {
        let p = out.join(ALIGNED_FILE);
        ply::save_cloud(&p, &self.cloud, format)?;
        let mut files = vec![p];
        for (i, r) in self.relocations.iter().enumerate() {
            if let Some(r) = r {
                let t = out.join(icp_trace_file(i));
                r.icp.trace_table().save(&t)?;
                files.push(t);
            }
        }
        Ok(files)
    }
}

/// Relocates each capture onto the reference tube (when enabled), orients
/// its normals toward its camera, and merges the two.
pub fn register(captures: [&PointCloud; 2], views: [Point3; 2], cfg: &PipelineConfig) -> Result<Registration> {
    let tree = if cfg.icp.enabled {
        let reference = cfg.ntcr.sample_surface(cfg.icp.reference_density)?;
        Some(KdTree::build(&reference)?)
    } else {
        None
    };
    let params = cfg.icp.relocation_params();
    let mut sheets = Vec::with_capacity(2);
    let mut relocations = [None, None];
    let mut excluded = [0; 2];
    for i in 0..2 {
        let (moved, transform) = match &tree {
            Some(t) => {
                let r = relocate_with_tree(captures[i], t, &params)?;
                if !r.fits_model {
                    warn!(
                        "camera {}: relocation residual {:.3} mm (converged: {}) does not fit the model",
                        CAMERAS[i], r.icp.rms_residual, r.icp.converged
                    );
                }
                let out = (r.cloud.clone(), r.icp.transform);
                relocations[i] = Some(r);
                out
            }
            None => (captures[i].clone(), RigidTransform::identity()),
        };
        let hint = transform.apply(&views[i]);
        let est = estimate_normals(&moved, cfg.recon.normal_k, &[hint])?;
        excluded[i] = est.excluded.len();
        sheets.push(est.cloud);
    }
    let cloud = merge_clouds(&sheets[0], &sheets[1])?.to_storage_precision();
    Ok(Registration {
        cloud,
        relocations,
        normals_excluded: excluded,
    })
}

pub fn reconstruct(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<PoissonOutcome> {
    let out = poisson_reconstruct(cloud, &cfg.recon.poisson_params())?;
    if !out.mesh.is_watertight() {
        warn!("reconstructed mesh is not watertight");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub pdc: PdcReport,
    pub heatmap: Heatmap,
    pub notches: NotchReport,
}

pub fn evaluate(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<Evaluation> {
    let m = &cfg.metrics;
    Ok(Evaluation {
        pdc: compute_pdc(cloud, m.pdc_voxel)?,
        heatmap: density_heatmap(cloud, m.heatmap_plane, m.heatmap_cell)?,
        notches: measure_notches(cloud, &cfg.ntcr, m.notch_bin)?,
    })
}

/// Writes the reports of one evaluation; returns the artifact entries.
pub fn write_reports(out: &Path, pdc: &PdcReport, heatmap: &Heatmap, notches: Option<&NotchReport>) -> Result<Vec<(&'static str, Vec<PathBuf>)>> {
    let mut arts = Vec::new();
    let p = out.join(PDC_FILE);
    pdc.table().save(&p)?;
    arts.push(("pdc", vec![p]));
    if let Some(n) = notches {
        let p = out.join(NOTCH_FILE);
        n.table().save(&p)?;
        arts.push(("notches", vec![p]));
    }
    let (c, g) = (out.join(HEATMAP_CSV_FILE), out.join(HEATMAP_PGM_FILE));
    heatmap.table().save(&c)?;
    heatmap.save_pgm(&g)?;
    arts.push(("heatmap", vec![c, g]));
    Ok(arts)
}

pub fn write_mesh(out: &Path, mesh: &crate::geometry::TriangleMesh, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let (p, o) = (out.join(MESH_PLY_FILE), out.join(MESH_OBJ_FILE));
    ply::save_mesh(&p, mesh, crate::geometry::BASE_FRAME, cfg.io.ply_format)?;
    obj::save_obj(&o, mesh)?;
    Ok(vec![p, o])
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub evaluation: Evaluation,
    pub registration: Registration,
    pub mesh_watertight: bool,
    pub summary: String,
}

pub fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs every stage, writing artifacts to `cfg.io.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<RunOutput, PipelineError> {
    let out = cfg.io.out_dir.clone();
    let mut manifest = Manifest {
        out_dir: out.clone(),
        ..Manifest::default()
    };
    macro_rules! stage {
        ($name:expr, $body:expr) => {{
            let t0 = Instant::now();
            let r: Result<_> = (|| $body)();
            match r {
                Ok(v) => {
                    manifest.timings.push(($name, t0.elapsed().as_secs_f64()));
                    info!("{} done in {:.2} s", $name, t0.elapsed().as_secs_f64());
                    v
                }
                Err(source) => {
                    return Err(PipelineError {
                        stage: $name,
                        source,
                        manifest,
                    })
                }
            }
        }};
    }

    // Nothing is written unless the config and inputs check out.
    let ready = cfg
        .validate()
        .map_err(|e| ("config", e))
        .and_then(|_| input_paths(cfg).map_err(|e| ("synth", e)))
        .and_then(|_| create_out_dir(&out).map_err(|e| ("synth", e)));
    if let Err((stage, source)) = ready {
        return Err(PipelineError { stage, source, manifest });
    }

    let maps = stage!("synth", {
        let maps = acquire(cfg)?;
        for (i, m) in maps.iter().enumerate() {
            pgm::save_depth(&out.join(depth_file(i)), m)?;
        }
        Ok(maps)
    });
    for i in 0..2 {
        manifest.add(&format!("depth_{}", CAMERAS[i]), "synth", vec![out.join(depth_file(i))]);
    }
    let raw = stage!("project", Ok(maps.each_ref().map(project)));
    let filtered = stage!("filter", {
        let a = filter_capture(&raw[0], cfg)?;
        let b = filter_capture(&raw[1], cfg)?;
        let files = [a.save(&out, 0, cfg.io.ply_format)?, b.save(&out, 1, cfg.io.ply_format)?];
        Ok(([a, b], files))
    });
    let (filtered, [fa, fb]) = filtered;
    manifest.add("cloud_a", "filter", fa);
    manifest.add("cloud_b", "filter", fb);
    let reg = stage!("register", {
        let views = [maps[0].camera_center(), maps[1].camera_center()];
        let reg = register([&filtered[0].cloud, &filtered[1].cloud], views, cfg)?;
        let files = reg.save(&out, cfg.io.ply_format)?;
        Ok((reg, files))
    });
    let (reg, files) = reg;
    manifest.add("aligned", "register", files);
    let mesh = stage!("reconstruct", {
        let r = reconstruct(&reg.cloud, cfg)?;
        let files = write_mesh(&out, &r.mesh, cfg)?;
        Ok((r, files))
    });
    manifest.add("mesh", "reconstruct", mesh.1);
    let (eval, arts) = stage!("metrics", {
        let e = evaluate(&reg.cloud, cfg)?;
        let arts = write_reports(&out, &e.pdc, &e.heatmap, Some(&e.notches))?;
        Ok((e, arts))
    });
    for (name, files) in arts {
        manifest.add(name, "metrics", files);
    }

    let summary = run_summary(&filtered, &reg, &mesh.0, &eval);
    let written: Result<()> = (|| {
        std::fs::write(out.join(SUMMARY_FILE), &summary).map_err(|e| Error::io(out.join(SUMMARY_FILE), e))?;
        manifest.table().save(&out.join(MANIFEST_FILE))
    })();
    if let Err(source) = written {
        return Err(PipelineError {
            stage: "metrics",
            source,
            manifest,
        });
    }
    Ok(RunOutput {
        manifest,
        evaluation: eval,
        registration: reg,
        mesh_watertight: mesh.0.mesh.is_watertight(),
        summary,
    })
}

fn run_summary(filtered: &[FilterReport; 2], reg: &Registration, mesh: &PoissonOutcome, eval: &Evaluation) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    for (i, f) in filtered.iter().enumerate() {
        let _ = writeln!(
            s,
            "camera {}: {} points, SOR removed {}, conditions removed {}, MLS passed through {}, kept {}",
            CAMERAS[i],
            f.input,
            f.sor_removed.len(),
            f.conditional_removed,
            f.mls_passed_through,
            f.cloud.len()
        );
    }
    for (i, r) in reg.relocations.iter().enumerate() {
        match r {
            Some(r) => {
                let _ = writeln!(
                    s,
                    "camera {}: relocated by {:.3} deg / {:.3} mm in {} iterations, residual {:.4} mm, fits model: {}",
                    CAMERAS[i],
                    r.icp.transform.rotation_angle().to_degrees(),
                    r.icp.transform.translation().norm(),
                    r.icp.iterations_used,
                    r.icp.rms_residual,
                    r.fits_model
                );
            }
            None => {
                let _ = writeln!(s, "camera {}: relocation disabled", CAMERAS[i]);
            }
        }
    }
    let _ = writeln!(
        s,
        "merged cloud: {} points; mesh: {} vertices, {} triangles, watertight: {}, CG iterations {}",
        reg.cloud.len(),
        mesh.mesh.vertices().len(),
        mesh.mesh.triangles().len(),
        mesh.mesh.is_watertight(),
        mesh.cg.iterations
    );
    s.push_str(&eval.pdc.summary());
    s.push_str(&eval.notches.summary());
    s
}
