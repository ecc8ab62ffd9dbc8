//! Pipeline configuration: a sectioned TOML file whose every key has a
//! default, so an empty file (or none) reproduces the reference scenario.
//!
//! ```toml
//! [ntcr]
//! notch_count = 16
//!
//! [rig]
//! standoff = 90.0
//! seed = 7
//!
//! [rig.camera]
//! extrinsic_error = [0.1, -0.05, -0.6, 0.3, -0.2, 0.4]
//!
//! [icp]
//! enabled = true
//! ```
//!
//! Command-line flags override single keys. A flag that contradicts a value
//! written explicitly in the file is an error naming both sources.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{ColorRange, ConditionalParams, MlsParams, SorParams, SpatialBox};
use crate::geometry::{RigidTransform, Vec3};
use crate::io::PlyFormat;
use crate::metrics::HeatmapPlane;
use crate::projection::CameraIntrinsics;
use crate::registration::{IcpParams, RelocationParams};
use crate::surface::{IsoPolicy, PoissonParams};
use crate::synth::{make_opposed_rig, NtcrSpec, VirtualCamera};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ntcr: NtcrSpec,
    pub rig: RigConfig,
    pub filter: FilterConfig,
    pub icp: IcpConfig,
    pub recon: ReconConfig,
    pub metrics: MetricsConfig,
    pub io: IoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    /// Camera distance from the tube center, mm.
    pub standoff: f64,
    pub seed: u64,
    /// Render the holding fixture behind the tube.
    pub backdrop: bool,
    /// Add depth noise; quantization always applies.
    pub noise: bool,
    pub camera: CameraConfig,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            standoff: 90.0,
            seed: 7,
            backdrop: true,
            noise: true,
            camera: CameraConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Focal length, px.
    pub focal: f64,
    /// mm
    pub baseline: f64,
    pub depth_noise_fraction: f64,
    /// px
    pub disparity_quantization: f64,
    /// Calibration error in camera coordinates: `[tx, ty, tz]` mm then
    /// `[rx, ry, rz]` degrees.
    pub extrinsic_error: [f64; 6],
}

impl Default for CameraConfig {
    fn default() -> Self {
        let cam = VirtualCamera::default();
        Self {
            width: cam.width,
            height: cam.height,
            focal: cam.intrinsics.fx,
            baseline: cam.stereo_baseline,
            depth_noise_fraction: cam.depth_noise_fraction,
            disparity_quantization: cam.disparity_quantization,
            extrinsic_error: [0.1, -0.05, -0.6, 0.3, -0.2, 0.4],
        }
    }
}

impl RigConfig {
    pub fn cameras(&self) -> Result<[VirtualCamera; 2]> {
        let c = &self.camera;
        let e = c.extrinsic_error;
        if !e.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("extrinsic error must be finite"));
        }
        let template = VirtualCamera {
            intrinsics: CameraIntrinsics::centered(c.focal, c.width, c.height),
            width: c.width,
            height: c.height,
            stereo_baseline: c.baseline,
            depth_noise_fraction: if self.noise { c.depth_noise_fraction } else { 0.0 },
            disparity_quantization: c.disparity_quantization,
            extrinsic_error: RigidTransform::from_euler_deg(e[3], e[4], e[5], Vec3::new(e[0], e[1], e[2])),
            ..VirtualCamera::default()
        };
        let rig = make_opposed_rig(self.standoff, &template)?;
        for cam in &rig {
            cam.validate()?;
        }
        Ok(rig)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub sor: SorParams,
    pub conditional: ConditionalConfig,
    pub mls: MlsParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionalConfig {
    /// Keep points within `tube_margin` of the tube's bounding box.
    pub tube_box: bool,
    /// mm
    pub tube_margin: f64,
    /// Explicit box; replaces the tube box when set.
    pub spatial_box: Option<SpatialBox>,
    pub color_range: Option<ColorRange>,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        Self {
            tube_box: true,
            tube_margin: 1.5,
            spatial_box: None,
            color_range: None,
        }
    }
}

impl ConditionalConfig {
    pub fn params(&self, spec: &NtcrSpec) -> ConditionalParams {
        let spatial_box = self.spatial_box.or_else(|| {
            self.tube_box.then(|| {
                let (lo, hi) = spec.bounds();
                let m = self.tube_margin;
                SpatialBox {
                    min: [lo.x - m, lo.y - m, lo.z - m],
                    max: [hi.x + m, hi.y + m, hi.z + m],
                }
            })
        });
        ConditionalParams {
            spatial_box,
            color_range: self.color_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub enabled: bool,
    pub max_iterations: usize,
    /// mm
    pub convergence_eps: f64,
    /// mm
    pub max_correspondence_distance: f64,
    /// Reference samples per mm².
    pub reference_density: f64,
    /// mm
    pub rms_threshold: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        let r = RelocationParams::default();
        Self {
            enabled: true,
            max_iterations: r.icp.max_iterations,
            convergence_eps: r.icp.convergence_eps,
            max_correspondence_distance: r.icp.max_correspondence_distance,
            reference_density: r.reference_density,
            rms_threshold: r.rms_threshold,
        }
    }
}

impl IcpConfig {
    pub fn relocation_params(&self) -> RelocationParams {
        RelocationParams {
            icp: IcpParams {
                max_iterations: self.max_iterations,
                convergence_eps: self.convergence_eps,
                max_correspondence_distance: self.max_correspondence_distance,
                initial_guess: RigidTransform::identity(),
            },
            reference_density: self.reference_density,
            rms_threshold: self.rms_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    /// mm
    pub voxel_size: f64,
    pub normal_k: usize,
    /// Empty voxels around the samples.
    pub padding: usize,
    /// Largest allowed grid node count.
    pub cell_budget: usize,
    /// Fixed extraction level; the mean indicator at the samples when unset.
    pub iso: Option<f64>,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        let p = PoissonParams::default();
        Self {
            voxel_size: p.voxel_size,
            normal_k: 16,
            padding: p.padding,
            cell_budget: p.cell_budget,
            iso: None,
            cg_tolerance: p.cg_tolerance,
            cg_max_iterations: p.cg_max_iterations,
        }
    }
}

impl ReconConfig {
    pub fn poisson_params(&self) -> PoissonParams {
        PoissonParams {
            voxel_size: self.voxel_size,
            padding: self.padding,
            cell_budget: self.cell_budget,
            iso: self.iso.map_or(IsoPolicy::MeanAtSamples, IsoPolicy::Fixed),
            cg_tolerance: self.cg_tolerance,
            cg_max_iterations: self.cg_max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// mm
    pub pdc_voxel: f64,
    pub heatmap_plane: HeatmapPlane,
    /// mm
    pub heatmap_cell: f64,
    /// mm
    pub notch_bin: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            pdc_voxel: 0.5,
            heatmap_plane: HeatmapPlane::Xy,
            heatmap_cell: 0.25,
            notch_bin: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    pub ply_format: PlyFormat,
    /// Two depth maps (`P5` PGM) to use instead of rendering the scene.
    pub inputs: Option<Vec<PathBuf>>,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("ntcr-out"),
            ply_format: PlyFormat::BinaryLittleEndian,
            inputs: None,
        }
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be positive")))
    }
}

fn in_section(section: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(m),
        other => Error::Config(format!("[{section}] {other}")),
    })
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is plain data")
    }

    /// Checks every section before any stage runs.
    pub fn validate(&self) -> Result<()> {
        in_section("ntcr", self.ntcr.validate())?;
        in_section("rig", positive(self.rig.standoff, "standoff").and(self.rig.cameras().map(|_| ())))?;
        in_section("filter.sor", self.filter.sor.validate())?;
        in_section("filter.conditional", {
            let c = &self.filter.conditional;
            if !(c.tube_margin >= 0.0 && c.tube_margin.is_finite()) {
                Err(Error::invalid("tube margin must be non-negative"))
            } else {
                c.params(&self.ntcr).validate()
            }
        })?;
        in_section("filter.mls", self.filter.mls.validate())?;
        in_section("icp", {
            let r = self.icp.relocation_params();
            r.icp
                .validate()
                .and(positive(r.reference_density, "reference density"))
                .and(positive(r.rms_threshold, "rms threshold"))
        })?;
        in_section("recon", {
            let r = &self.recon;
            positive(r.voxel_size, "voxel size")
                .and(positive(r.cg_tolerance, "CG tolerance"))
                .and(if r.normal_k < 3 {
                    Err(Error::invalid("normal_k must be at least 3"))
                } else if r.cell_budget == 0 || r.cg_max_iterations == 0 {
                    Err(Error::invalid("cell budget and CG iterations must be positive"))
                } else if r.iso.is_some_and(|v| !v.is_finite()) {
                    Err(Error::invalid("iso value must be finite"))
                } else {
                    Ok(())
                })
        })?;
        in_section("metrics", {
            let m = &self.metrics;
            positive(m.pdc_voxel, "PDC voxel")
                .and(positive(m.heatmap_cell, "heatmap cell"))
                .and(positive(m.notch_bin, "notch bin"))
        })?;
        in_section("io", match &self.io.inputs {
            Some(v) if v.len() != 2 => Err(Error::invalid("inputs must list exactly two depth maps")),
            _ => Ok(()),
        })
    }
}

/// A config together with the keys its file set explicitly.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    explicit: toml::Table,
    source: String,
}

/// One command-line flag setting one config key.
#[derive(Debug, Clone)]
pub struct Override {
    pub flag: String,
    /// Dotted key, e.g. `rig.seed`.
    pub key: String,
    pub value: toml::Value,
}

impl Override {
    pub fn new(flag: &str, key: &str, value: impl Into<toml::Value>) -> Self {
        Self {
            flag: flag.into(),
            key: key.into(),
            value: value.into(),
        }
    }
}

impl LoadedConfig {
    pub fn defaults() -> Self {
        Self {
            config: PipelineConfig::default(),
            explicit: toml::Table::new(),
            source: "defaults".into(),
        }
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let explicit: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{source}: {e}")))?;
        let config = PipelineConfig::from_toml_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
        Ok(Self {
            config,
            explicit,
            source: source.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies flag overrides, refusing any that contradict the file.
    pub fn apply(&mut self, overrides: &[Override]) -> Result<()> {
        let mut merged = toml::Value::try_from(&self.config).expect("config is plain data");
        for o in overrides {
            if let Some(v) = lookup(&self.explicit, &o.key) {
                if *v != o.value {
                    return Err(Error::Config(format!(
                        "flag {} = {} conflicts with {} = {} in {}",
                        o.flag, o.value, o.key, v, self.source
                    )));
                }
            }
            set(&mut merged, &o.key, o.value.clone())?;
        }
        self.config = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override: {e}")))?;
        Ok(())
    }
}

fn lookup<'a>(t: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut v = t.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

fn set(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut v = root;
    for p in &parts[..parts.len() - 1] {
        v = v
            .as_table_mut()
            .and_then(|t| t.get_mut(*p))
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    let t = v
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
