//! `ntcr-recon`: run the reconstruction pipeline whole or one stage at a time.
//!
//! Every subcommand reads its inputs from files (by default the previous
//! stage's artifacts in the output directory), so chaining them reproduces
//! `run` byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use ntcr_recon::config::{LoadedConfig, Override, PipelineConfig};
use ntcr_recon::io::{pgm, ply};
use ntcr_recon::metrics::{compute_pdc, density_heatmap, measure_notches};
use ntcr_recon::pipeline::{self, CAMERAS};
use ntcr_recon::{Error, Point3, PointCloud};

/// Environment variable that caps the worker thread count.
const THREADS_VAR: &str = "NTCR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ntcr-recon", version, about = "Notched-tube morphology reconstruction from two depth cameras")]
struct Cli {
    /// TOML config file; keys it omits take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Scene noise seed (`rig.seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (`io.out_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Skip relocation onto the reference tube (`icp.enabled = false`).
    #[arg(long, global = true)]
    no_icp: bool,
    /// Depth maps to use instead of rendering (`io.inputs`); give two.
    #[arg(long, global = true, value_name = "PGM")]
    input: Vec<PathBuf>,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render both depth maps (or copy the configured inputs).
    Synth,
    /// Back-project depth maps to raw clouds.
    Project {
        /// Depth maps, camera `a` first [default: OUT/depth_{a,b}.pgm]
        maps: Vec<PathBuf>,
    },
    /// SOR, conditions and MLS on raw clouds.
    Filter {
        /// Raw clouds, camera `a` first [default: OUT/raw_{a,b}.ply]
        clouds: Vec<PathBuf>,
    },
    /// Relocate both filtered clouds, estimate normals and merge.
    Register {
        /// Filtered clouds, camera `a` first [default: OUT/cloud_{a,b}.ply]
        clouds: Vec<PathBuf>,
    },
    /// Poisson surface from an oriented cloud.
    Reconstruct {
        /// [default: OUT/aligned.ply]
        cloud: Option<PathBuf>,
    },
    /// PDC, density heatmap and notch widths of a cloud.
    Metrics {
        /// [default: OUT/aligned.ply]
        cloud: Option<PathBuf>,
    },
    /// Every stage in order (the default).
    Run,
}

/// Why the process stops; decides the exit code.
enum Failure {
    Config(Error),
    Stage(&'static str, Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Stage(..) => 3,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("error: {e}"),
                Failure::Stage(s, e) => eprintln!("error: stage `{s}` failed: {e}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let cfg = load_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    cfg.validate().map_err(Failure::Config)?;
    let out = cfg.io.out_dir.clone();
    match cli.command.unwrap_or(Command::Run) {
        Command::Run => {
            let r = pipeline::run_pipeline(&cfg).map_err(|e| match e.stage {
                "config" => Failure::Config(e.source),
                s => {
                    if !e.manifest.artifacts.is_empty() {
                        eprintln!("completed before the failure:");
                        for a in &e.manifest.artifacts {
                            eprintln!("  {} ({})", a.name, a.stage);
                        }
                    }
                    Failure::Stage(s, e.source)
                }
            })?;
            print!("{}", r.summary);
            println!("manifest: {}", out.join(pipeline::MANIFEST_FILE).display());
            Ok(())
        }
        Command::Synth => stage("synth", || {
            pipeline::input_paths(&cfg)?;
            let maps = pipeline::acquire(&cfg)?;
            pipeline::create_out_dir(&out)?;
            let mut files = Vec::new();
            for (i, m) in maps.iter().enumerate() {
                let p = out.join(pipeline::depth_file(i));
                pgm::save_depth(&p, m)?;
                files.push(p);
            }
            Ok(files)
        }),
        Command::Project { maps } => stage("project", || {
            let maps = per_camera(maps, &out, pipeline::depth_file)?;
            let loaded = maps.iter().map(|p| pgm::load_depth(p)).collect::<Result<Vec<_>, _>>()?;
            pipeline::create_out_dir(&out)?;
            let mut files = Vec::new();
            for (i, m) in loaded.iter().enumerate() {
                let p = out.join(pipeline::raw_file(i));
                ply::save_cloud(&p, &pipeline::project(m), cfg.io.ply_format)?;
                files.push(p);
            }
            Ok(files)
        }),
        Command::Filter { clouds } => stage("filter", || {
            let clouds = per_camera(clouds, &out, pipeline::raw_file)?;
            let loaded = clouds.iter().map(|p| ply::load_cloud(p)).collect::<Result<Vec<_>, _>>()?;
            pipeline::create_out_dir(&out)?;
            let mut files = Vec::new();
            for (i, c) in loaded.iter().enumerate() {
                let f = pipeline::filter_capture(c, &cfg)?;
                info!(
                    "camera {}: SOR removed {}, conditions removed {}, kept {}",
                    CAMERAS[i],
                    f.sor_removed.len(),
                    f.conditional_removed,
                    f.cloud.len()
                );
                files.extend(f.save(&out, i, cfg.io.ply_format)?);
            }
            Ok(files)
        }),
        Command::Register { clouds } => stage("register", || {
            let clouds = per_camera(clouds, &out, pipeline::cloud_file)?;
            let [a, b]: [PathBuf; 2] = clouds
                .try_into()
                .map_err(|_| Error::InvalidInput("register needs both filtered clouds".into()))?;
            let (a, b) = (ply::load_cloud(&a)?, ply::load_cloud(&b)?);
            let views = camera_views(&cfg, &out)?;
            let reg = pipeline::register([&a, &b], views, &cfg)?;
            pipeline::create_out_dir(&out)?;
            reg.save(&out, cfg.io.ply_format)
        }),
        Command::Reconstruct { cloud } => stage("reconstruct", || {
            let cloud = ply::load_cloud(&cloud.unwrap_or_else(|| out.join(pipeline::ALIGNED_FILE)))?;
            let r = pipeline::reconstruct(&cloud, &cfg)?;
            info!(
                "{} vertices, {} triangles, watertight: {}",
                r.mesh.vertices().len(),
                r.mesh.triangles().len(),
                r.mesh.is_watertight()
            );
            pipeline::create_out_dir(&out)?;
            pipeline::write_mesh(&out, &r.mesh, &cfg)
        }),
        Command::Metrics { cloud } => stage("metrics", || {
            let cloud = ply::load_cloud(&cloud.unwrap_or_else(|| out.join(pipeline::ALIGNED_FILE)))?;
            metrics(&cloud, &cfg, &out)
        }),
    }
}

/// Runs one stage body and lists what it wrote.
fn stage(name: &'static str, body: impl FnOnce() -> ntcr_recon::Result<Vec<PathBuf>>) -> Result<(), Failure> {
    let files = body().map_err(|e| Failure::Stage(name, e))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn metrics(cloud: &PointCloud, cfg: &PipelineConfig, out: &Path) -> ntcr_recon::Result<Vec<PathBuf>> {
    let m = &cfg.metrics;
    let pdc = compute_pdc(cloud, m.pdc_voxel)?;
    let heatmap = density_heatmap(cloud, m.heatmap_plane, m.heatmap_cell)?;
    // Notch windows only mean something in the base frame, on the tube.
    let notches = match measure_notches(cloud, &cfg.ntcr, m.notch_bin) {
        Ok(n) => Some(n),
        Err(e @ (Error::FrameMismatch { .. } | Error::Measurement(_))) => {
            warn!("skipping notch widths: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    print!("{}", pdc.summary());
    if let Some(n) = &notches {
        print!("{}", n.summary());
    }
    pipeline::create_out_dir(out)?;
    let arts = pipeline::write_reports(out, &pdc, &heatmap, notches.as_ref())?;
    Ok(arts.into_iter().flat_map(|(_, f)| f).collect())
}

/// Explicit paths, or the previous stage's per-camera files in `out`.
fn per_camera(given: Vec<PathBuf>, out: &Path, name: fn(usize) -> String) -> ntcr_recon::Result<Vec<PathBuf>> {
    if given.len() > CAMERAS.len() {
        return Err(Error::InvalidInput(format!(
            "at most {} inputs (one per camera), got {}",
            CAMERAS.len(),
            given.len()
        )));
    }
    if !given.is_empty() {
        return Ok(given);
    }
    Ok((0..CAMERAS.len()).map(|i| out.join(name(i))).collect())
}

/// Camera centers for normal orientation: the configured inputs, else the
/// depth maps already in `out`, else the nominal rig.
fn camera_views(cfg: &PipelineConfig, out: &Path) -> ntcr_recon::Result<[Point3; 2]> {
    if cfg.io.inputs.is_some() {
        return pipeline::viewpoints(cfg);
    }
    let maps = [0, 1].map(|i| out.join(pipeline::depth_file(i)));
    if maps.iter().all(|p| p.is_file()) {
        return Ok([pgm::load_depth(&maps[0])?.camera_center(), pgm::load_depth(&maps[1])?.camera_center()]);
    }
    warn!("no depth maps in {}; orienting normals toward the nominal rig", out.display());
    pipeline::viewpoints(cfg)
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut loaded = match &cli.config {
        Some(p) => LoadedConfig::load(p).map_err(Failure::Config)?,
        None => LoadedConfig::defaults(),
    };
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).map_err(|_| Failure::Config(Error::Config(format!("--seed {seed} is too large"))))?;
        overrides.push(Override::new("--seed", "rig.seed", seed));
    }
    if let Some(out) = &cli.out {
        overrides.push(Override::new("--out", "io.out_dir", out.display().to_string()));
    }
    if cli.no_icp {
        overrides.push(Override::new("--no-icp", "icp.enabled", false));
    }
    if !cli.input.is_empty() {
        let paths: Vec<String> = cli.input.iter().map(|p| p.display().to_string()).collect();
        overrides.push(Override::new("--input", "io.inputs", paths));
    }
    loaded.apply(&overrides).map_err(Failure::Config)?;
    Ok(loaded.config)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(Error::Config(format!("{THREADS_VAR}={v} is not a positive integer"))))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(Error::Config(format!("{THREADS_VAR}: {e}"))))
}
