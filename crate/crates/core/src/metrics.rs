//! Point-density consistency, density heatmaps and notch-width measurement.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, BASE_FRAME};
use crate::io::csv::Table;
use crate::synth::NtcrSpec;

/// Slack for lattice points landing exactly on a voxel face.
const LATTICE_SLACK: f64 = 1e-9;

/// Voxel-count statistics over every voxel of the cloud's tight bounding
/// box, empty voxels included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdcReport {
    /// μ, points per voxel.
    pub mean_density: f64,
    /// σ (population), points per voxel.
    pub std_density: f64,
    /// σ / μ.
    pub lambda: f64,
    /// mm
    pub voxel_size: f64,
    pub occupied_voxel_count: usize,
    pub voxel_count: usize,
    pub point_count: usize,
    pub dims: [usize; 3],
    /// A single point (or coincident points): σ = λ = 0 by convention.
    pub degenerate: bool,
}

impl PdcReport {
    /// Report from given moments alone.
    pub fn from_stats(mean_density: f64, std_density: f64, voxel_size: f64) -> Result<Self> {
        if !(mean_density > 0.0) || !(std_density >= 0.0) || !(voxel_size > 0.0) {
            return Err(Error::invalid("PDC needs μ > 0, σ ≥ 0 and voxel size > 0"));
        }
        Ok(Self {
            mean_density,
            std_density,
            lambda: std_density / mean_density,
            voxel_size,
            occupied_voxel_count: 0,
            voxel_count: 0,
            point_count: 0,
            dims: [0; 3],
            degenerate: false,
        })
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["metric", "value"])
            .note("statistics over all voxels of the tight axis-aligned bounding box, empty voxels included")
            .note("std is the population standard deviation");
        t.push(["mean_density", &self.mean_density.to_string()]);
        t.push(["std_density", &self.std_density.to_string()]);
        t.push(["lambda", &self.lambda.to_string()]);
        t.push(["voxel_size_mm", &self.voxel_size.to_string()]);
        t.push(["occupied_voxels", &self.occupied_voxel_count.to_string()]);
        t.push(["voxels", &self.voxel_count.to_string()]);
        t.push(["points", &self.point_count.to_string()]);
        t.push(["degenerate", &self.degenerate.to_string()]);
        t
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "PDC over {} voxels of {} mm ({}x{}x{} bounding box, {} occupied, {} points)\n",
            self.voxel_count,
            self.voxel_size,
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.occupied_voxel_count,
            self.point_count
        );
        let _ = writeln!(
            s,
            "  mean {:.4}  std {:.4}  lambda {:.4}",
            self.mean_density, self.std_density, self.lambda
        );
        if self.degenerate {
            s.push_str("  degenerate: a single occupied voxel\n");
        }
        s
    }
}

fn lattice_dims(extent: f64, cell: f64) -> usize {
    (extent / cell + LATTICE_SLACK).floor() as usize + 1
}

fn lattice_index(offset: f64, cell: f64, dim: usize) -> usize {
    ((offset / cell + LATTICE_SLACK).floor().max(0.0) as usize).min(dim - 1)
}

pub fn compute_pdc(cloud: &PointCloud, voxel_size: f64) -> Result<PdcReport> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::invalid("PDC voxel size must be positive"));
    }
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let dims: [usize; 3] = std::array::from_fn(|a| lattice_dims(hi[a] - lo[a], voxel_size));
    let total = dims.iter().try_fold(1u128, |acc, &d| acc.checked_mul(d as u128));
    let voxel_count = total
        .filter(|&v| v <= usize::MAX as u128)
        .ok_or_else(|| Error::invalid("PDC voxel lattice is too large"))? as usize;
    let mut keys: Vec<u128> = cloud
        .points()
        .iter()
        .map(|p| {
            let i: [usize; 3] = std::array::from_fn(|a| lattice_index(p[a] - lo[a], voxel_size, dims[a]));
            (i[2] as u128 * dims[1] as u128 + i[1] as u128) * dims[0] as u128 + i[0] as u128
        })
        .collect();
    keys.sort_unstable();
    let mut counts: Vec<u64> = Vec::new();
    for (n, k) in keys.iter().enumerate() {
        if n > 0 && keys[n - 1] == *k {
            *counts.last_mut().expect("nonempty") += 1;
        } else {
            counts.push(1);
        }
    }
    let n = cloud.len();
    let mean = n as f64 / voxel_count as f64;
    let empty = (voxel_count - counts.len()) as f64;
    let ss: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() + empty * mean * mean;
    let std = (ss / voxel_count as f64).sqrt();
    let degenerate = counts.len() == 1;
    let (std, lambda) = if degenerate { (0.0, 0.0) } else { (std, std / mean) };
    Ok(PdcReport {
        mean_density: mean,
        std_density: std,
        lambda,
        voxel_size,
        occupied_voxel_count: counts.len(),
        voxel_count,
        point_count: n,
        dims,
        degenerate,
    })
}

/// Axis-aligned projection plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapPlane {
    #[default]
    Xy,
    Xz,
    Yz,
}

impl HeatmapPlane {
    pub fn axes(self) -> (usize, usize) {
        match self {
            Self::Xy => (0, 1),
            Self::Xz => (0, 2),
            Self::Yz => (1, 2),
        }
    }

    pub fn names(self) -> (&'static str, &'static str) {
        const N: [&str; 3] = ["x", "y", "z"];
        let (u, v) = self.axes();
        (N[u], N[v])
    }
}

impl std::str::FromStr for HeatmapPlane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(Self::Xy),
            "xz" => Ok(Self::Xz),
            "yz" => Ok(Self::Yz),
            _ => Err(Error::invalid(format!("unknown heatmap plane `{s}` (xy, xz or yz)"))),
        }
    }
}

/// Point counts on a plane grid anchored at the cloud's minimum corner.
/// `counts` is row-major: row `r` covers the second axis, column `c` the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub plane: HeatmapPlane,
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub cols: usize,
    pub rows: usize,
    pub counts: Vec<u64>,
}

impl Heatmap {
    pub fn at(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sums over rows, one per column.
    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.at(c, r)).sum())
            .collect()
    }

    /// One line per cell with its center coordinates.
    pub fn table(&self) -> Table {
        let (u, v) = self.plane.names();
        let mut t = Table::new(["col".to_string(), "row".into(), format!("{u}_mm"), format!("{v}_mm"), "count".into()])
            .note(format!("cell size {} mm", self.cell_size));
        for r in 0..self.rows {
            for c in 0..self.cols {
                let cu = self.origin[0] + (c as f64 + 0.5) * self.cell_size;
                let cv = self.origin[1] + (r as f64 + 0.5) * self.cell_size;
                t.push([c.to_string(), r.to_string(), cu.to_string(), cv.to_string(), self.at(c, r).to_string()]);
            }
        }
        t
    }

    /// Grayscale image, brightest at the largest count; the top image row is
    /// the largest second-axis coordinate.
    pub fn write_pgm(&self, w: &mut impl Write) -> Result<()> {
        let flipped: Vec<u64> = (0..self.rows)
            .rev()
            .flat_map(|r| self.counts[r * self.cols..(r + 1) * self.cols].iter().copied())
            .collect();
        crate::io::pgm::write_gray8(w, &flipped, self.cols).map_err(|e| Error::format("PGM", e.to_string()))
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_pgm(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

pub fn density_heatmap(cloud: &PointCloud, plane: HeatmapPlane, cell_size: f64) -> Result<Heatmap> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::invalid("heatmap cell size must be positive"));
    }
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let (a, b) = plane.axes();
    let cols = lattice_dims(hi[a] - lo[a], cell_size);
    let rows = lattice_dims(hi[b] - lo[b], cell_size);
    if cols.checked_mul(rows).is_none_or(|n| n > 1 << 28) {
        return Err(Error::invalid("heatmap grid is too large; use a larger cell size"));
    }
    let mut counts = vec![0u64; cols * rows];
    for p in cloud.points() {
        let c = lattice_index(p[a] - lo[a], cell_size, cols);
        let r = lattice_index(p[b] - lo[b], cell_size, rows);
        counts[r * cols + c] += 1;
    }
    Ok(Heatmap {
        plane,
        origin: [lo[a], lo[b]],
        cell_size,
        cols,
        rows,
        counts,
    })
}

/// Fraction of the wall depth above the cut level where the band starts.
const BAND_MARGIN: f64 = 0.1;
/// Points whose normal is this close to axial are cut faces or caps.
const AXIAL_NORMAL_LIMIT: f64 = 0.9;
/// Bins below this share of the median occupied count are gaps.
const GAP_FRACTION: f64 = 0.2;
/// Widest reach, mm, of a width window past each notch edge.
const EDGE_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotchMeasurement {
    pub index: usize,
    /// Expected center along the backbone, mm.
    pub center: f64,
    /// Measured width, mm, when observable.
    pub width: Option<f64>,
}

impl NotchMeasurement {
    pub fn observable(&self) -> bool {
        self.width.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NotchReport {
    pub notches: Vec<NotchMeasurement>,
    pub standard_width: f64,
    pub bin_size: f64,
    /// Median count over occupied bins: the solid-wall reference level.
    pub reference_count: f64,
    /// Mean count of bins clear of every notch edge; the width baseline.
    pub solid_count: f64,
    pub observable_count: usize,
    pub mean_width: f64,
    pub median_width: f64,
    /// Population standard deviation.
    pub std_width: f64,
    /// No notches in the tube spec or none observed; summary fields are zero.
    pub empty: bool,
}

impl NotchReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["notch", "center_mm", "observable", "width_mm"])
            .note(format!("standard width {} mm", self.standard_width))
            .note(format!(
                "observable {}/{}  mean {:.4}  median {:.4}  std {:.4}",
                self.observable_count,
                self.notches.len(),
                self.mean_width,
                self.median_width,
                self.std_width
            ));
        for n in &self.notches {
            t.push([
                n.index.to_string(),
                n.center.to_string(),
                n.observable().to_string(),
                n.width.map_or(String::new(), |w| w.to_string()),
            ]);
        }
        t
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "notches observable {}/{} (standard width {} mm, bin {} mm)\n",
            self.observable_count,
            self.notches.len(),
            self.standard_width,
            self.bin_size
        );
        if self.empty {
            s.push_str("  no widths measured\n");
            return s;
        }
        let _ = writeln!(
            s,
            "  width mean {:.3}  median {:.3}  std {:.3} mm",
            self.mean_width, self.median_width, self.std_width
        );
        for n in &self.notches {
            let _ = match n.width {
                Some(w) => writeln!(s, "  #{:<2} at {:6.2} mm: {w:.3} mm", n.index, n.center),
                None => writeln!(s, "  #{:<2} at {:6.2} mm: not observable", n.index, n.center),
            };
        }
        s
    }
}

/// Axial occupancy histogram of the notched side of the tube, with gaps
/// matched to the expected notch windows. The cloud must be in the
/// reference frame.
pub fn measure_notches(cloud: &PointCloud, spec: &NtcrSpec, bin_size: f64) -> Result<NotchReport> {
    spec.validate()?;
    if cloud.frame() != BASE_FRAME {
        return Err(Error::FrameMismatch {
            expected: BASE_FRAME.into(),
            found: cloud.frame().into(),
        });
    }
    if !(bin_size > 0.0 && bin_size.is_finite()) {
        return Err(Error::invalid("notch bin size must be positive"));
    }
    let mut report = NotchReport {
        notches: Vec::new(),
        standard_width: spec.notch_width,
        bin_size,
        reference_count: 0.0,
        solid_count: 0.0,
        observable_count: 0,
        mean_width: 0.0,
        median_width: 0.0,
        std_width: 0.0,
        empty: true,
    };
    if spec.notch_count == 0 {
        return Ok(report);
    }
    let hist = axial_histogram(cloud, spec, bin_size);
    let mut occupied: Vec<u64> = hist.iter().copied().filter(|&c| c > 0).collect();
    if occupied.is_empty() {
        return Err(Error::Measurement("no points on the notched side of the tube".into()));
    }
    occupied.sort_unstable();
    let reference = median(&occupied.iter().map(|&c| c as f64).collect::<Vec<_>>());
    report.reference_count = reference;
    let runs = gap_runs(&hist, reference);
    let windows = spec.notch_windows();
    let margin = EDGE_MARGIN.min(((spec.notch_spacing - spec.notch_width) / 2.0).max(0.0));
    let solid = solid_mean(&hist, bin_size, &windows, margin / 2.0, spec.tube_length).unwrap_or(reference);
    report.solid_count = solid;
    for k in 0..spec.notch_count as usize {
        let (a, b) = spec.notch_window(k);
        let (ba, bb) = (a / bin_size, b / bin_size);
        // The run with the largest overlap of the window.
        let best = runs
            .iter()
            .map(|&(s, e)| (s, e, (e as f64 + 1.0).min(bb) - (s as f64).max(ba)))
            .filter(|r| r.2 > 0.0)
            .max_by(|x, y| x.2.total_cmp(&y.2));
        let width = best.map(|_| deficit_width(&hist, bin_size, a - margin, b + margin, solid));
        report.notches.push(NotchMeasurement {
            index: k,
            center: spec.notch_center(k),
            width: width.filter(|&w| w > 0.0),
        });
    }
    let widths: Vec<f64> = report.notches.iter().filter_map(|n| n.width).collect();
    report.observable_count = widths.len();
    if !widths.is_empty() {
        let n = widths.len() as f64;
        let mean = widths.iter().sum::<f64>() / n;
        report.mean_width = mean;
        report.std_width = (widths.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = widths;
        sorted.sort_by(f64::total_cmp);
        report.median_width = median(&sorted);
        report.empty = false;
    }
    Ok(report)
}

/// Counts per axial bin over `[0, L]` of points in the band above the cut
/// level, skipping points whose normal is nearly axial.
pub fn axial_histogram(cloud: &PointCloud, spec: &NtcrSpec, bin_size: f64) -> Vec<u64> {
    let bins = (spec.tube_length / bin_size).ceil() as usize;
    let c = spec.cut_level();
    let band = c + BAND_MARGIN * (spec.outer_radius() - c);
    let mut hist = vec![0u64; bins];
    let normals = cloud.normals();
    for (i, p) in cloud.points().iter().enumerate() {
        let tc = spec.to_tube(p);
        if spec.cut_height(tc.y, tc.z) <= band || tc.s < 0.0 || tc.s >= spec.tube_length {
            continue;
        }
        if let Some(ns) = normals {
            let (_, t, _) = spec.frame_at(tc.s);
            if ns[i].dot(&t).abs() > AXIAL_NORMAL_LIMIT {
                continue;
            }
        }
        let b = ((tc.s / bin_size) as usize).min(bins - 1);
        hist[b] += 1;
    }
    hist
}

/// Maximal runs `[start, end]` of bins below the gap threshold.
fn gap_runs(hist: &[u64], reference: f64) -> Vec<(usize, usize)> {
    let low = |c: u64| (c as f64) < GAP_FRACTION * reference;
    let mut runs = Vec::new();
    let mut i = 0;
    while i < hist.len() {
        if low(hist[i]) {
            let s = i;
            while i + 1 < hist.len() && low(hist[i + 1]) {
                i += 1;
            }
            runs.push((s, i));
        }
        i += 1;
    }
    runs
}

/// Width of a gap run in bins: the summed occupancy deficit over the run
/// and one neighbor bin each side, so partly covered boundary bins
/// contribute their empty share.
/// Mean count over bins farther than `guard` from every window and from the
/// tube ends. `None` when no such bin exists.
fn solid_mean(hist: &[u64], bin: f64, windows: &[(f64, f64)], guard: f64, length: f64) -> Option<f64> {
    let (mut sum, mut n) = (0u64, 0usize);
    for (i, &c) in hist.iter().enumerate() {
        let x = (i as f64 + 0.5) * bin;
        let clear = x > guard && x < length - guard && windows.iter().all(|&(a, b)| x < a - guard || x > b + guard);
        if clear {
            sum += c;
            n += 1;
        }
    }
    (n > 0 && sum > 0).then(|| sum as f64 / n as f64)
}

/// Missing mass over the bins centred in `(lo, hi)`, in mm of solid wall.
/// Unclamped, so points smeared into the gap cancel the holes they leave
/// beside it.
fn deficit_width(hist: &[u64], bin: f64, lo: f64, hi: f64, solid: f64) -> f64 {
    hist.iter()
        .enumerate()
        .filter(|(i, _)| {
            let x = (*i as f64 + 0.5) * bin;
            x > lo && x < hi
        })
        .map(|(_, &c)| 1.0 - c as f64 / solid)
        .sum::<f64>()
        * bin
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// One point at each node of a regular lattice starting at `origin`.
pub fn lattice_cloud(origin: Point3, dims: [usize; 3], voxel_size: f64) -> PointCloud {
    let mut pts = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                pts.push(origin + crate::geometry::Vec3::new(i as f64, j as f64, k as f64) * voxel_size);
            }
        }
    }
    PointCloud::new(pts, BASE_FRAME).expect("finite lattice")
}
