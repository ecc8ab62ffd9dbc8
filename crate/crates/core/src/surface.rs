//! Normal estimation and grid Poisson surface reconstruction.
//!
//! The indicator `χ` lives on the nodes of a regular grid. Its discrete
//! gradient `Dχ` lives on grid edges: component `a` of cell `(i, j, k)` is
//! `(χ[node + e_a] − χ[node]) / h`, located at the edge midpoint. Oriented
//! samples are splatted onto those edge midpoints to form `V`, and `χ`
//! minimizes `‖Dχ − V‖²`, i.e. solves `DᵀD χ = DᵀV`. Edges leaving the grid
//! do not exist, which is the zero-Neumann boundary. `V` is built from
//! inward normals, so `χ` is high inside the surface.
//!
//! The isosurface is extracted with marching tetrahedra on the Kuhn
//! six-tetrahedron split of each cube. The split is translation invariant,
//! so neighboring cubes agree on shared faces, and vertices are keyed by
//! grid edge; a surface that stays inside the grid comes out closed and
//! edge-manifold.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, TriangleMesh, Vec3};
use crate::kdtree::KdTree;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    /// Points with a valid normal, in input order.
    pub cloud: PointCloud,
    /// Input indices whose neighborhood was degenerate.
    pub excluded: Vec<usize>,
}

/// PCA normals from the `k` nearest neighbors (the point included), each
/// flipped to face its nearest viewpoint hint.
pub fn estimate_normals(cloud: &PointCloud, k: usize, hints: &[Point3]) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::invalid("normal estimation needs k ≥ 3"));
    }
    if cloud.len() <= k {
        return Err(Error::NeighborCount { k, size: cloud.len() });
    }
    let tree = KdTree::build(cloud)?;
    let normals: Vec<Option<Vec3>> = cloud
        .points()
        .par_iter()
        .map(|p| -> Result<Option<Vec3>> {
            let hood = tree.k_nearest(p, k)?;
            let pts: Vec<Point3> = hood.iter().map(|h| tree.points()[h.index]).collect();
            let Some(mut n) = pca_normal(&pts) else {
                return Ok(None);
            };
            let view = hints.iter().min_by(|a, b| {
                (*a - p).norm_squared().total_cmp(&(*b - p).norm_squared())
            });
            if let Some(h) = view {
                if n.dot(&(h - p)) < 0.0 {
                    n = -n;
                }
            }
            Ok(Some(n))
        })
        .collect::<Result<_>>()?;
    let (kept, excluded): (Vec<usize>, Vec<usize>) = (0..cloud.len()).partition(|&i| normals[i].is_some());
    let ns = kept.iter().map(|&i| normals[i].expect("kept")).collect();
    Ok(NormalEstimate {
        cloud: cloud.select(&kept).with_normals(ns)?,
        excluded,
    })
}

/// Unit normal of the best-fit plane; `None` when the points are (nearly)
/// collinear.
fn pca_normal(pts: &[Point3]) -> Option<Vec3> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let cov = pts.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - c;
        acc + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, max) = (eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    if !(max > 0.0) || mid <= 1e-8 * max {
        return None;
    }
    let v: Vec3 = eig.eigenvectors.column(idx[0]).into();
    let len = v.norm();
    (len > 0.0).then(|| v / len)
}

/// Node grid of scalars (`χ`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub origin: Point3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

/// Edge field (`V`): component `a` of cell `(i, j, k)` sits at the midpoint
/// of the edge from node `(i, j, k)` along axis `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    pub origin: Point3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub values: Vec<Vec3>,
}

impl ScalarGrid {
    pub fn zeros(origin: Point3, voxel_size: f64, dims: [usize; 3]) -> Self {
        Self {
            origin,
            voxel_size,
            dims,
            values: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Trilinear interpolation, clamped to the grid.
    pub fn sample(&self, p: &Point3) -> f64 {
        let g = (p - self.origin) / self.voxel_size;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let hi = (self.dims[a] - 1) as f64;
            let x = g[a].clamp(0.0, hi);
            let i = (x.floor() as usize).min(self.dims[a].saturating_sub(2));
            base[a] = i;
            frac[a] = x - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                idx[a] = (base[a] + bit).min(self.dims[a] - 1);
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            acc += w * self.values[self.index(idx[0], idx[1], idx[2])];
        }
        acc
    }
}

impl VectorGrid {
    pub fn zeros(origin: Point3, voxel_size: f64, dims: [usize; 3]) -> Self {
        Self {
            origin,
            voxel_size,
            dims,
            values: vec![Vec3::zeros(); dims[0] * dims[1] * dims[2]],
        }
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    /// `V` equal to the discrete gradient of `phi` sampled at the nodes.
    pub fn gradient_of(phi: &ScalarGrid) -> Self {
        let mut v = Self::zeros(phi.origin, phi.voxel_size, phi.dims);
        let [nx, ny, nz] = phi.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let here = phi.values[phi.index(i, j, k)];
                    let c = v.index(i, j, k);
                    if i + 1 < nx {
                        v.values[c].x = (phi.values[phi.index(i + 1, j, k)] - here) / phi.voxel_size;
                    }
                    if j + 1 < ny {
                        v.values[c].y = (phi.values[phi.index(i, j + 1, k)] - here) / phi.voxel_size;
                    }
                    if k + 1 < nz {
                        v.values[c].z = (phi.values[phi.index(i, j, k + 1)] - here) / phi.voxel_size;
                    }
                }
            }
        }
        v
    }
}

/// Fixed-size chunks summed in order: the result does not depend on the
/// number of threads.
const REDUCE_CHUNK: usize = 4096;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

fn sum(a: &[f64]) -> f64 {
    let partial: Vec<f64> = a.par_chunks(REDUCE_CHUNK).map(|x| x.iter().sum::<f64>()).collect();
    partial.iter().sum()
}

/// `h²·DᵀD`: the graph Laplacian of the node grid.
fn laplacian(dims: [usize; 3], x: &[f64], out: &mut [f64]) {
    let [nx, ny, nz] = dims;
    let (sy, sz) = (nx, nx * ny);
    out.par_iter_mut().enumerate().for_each(|(c, o)| {
        let i = c % nx;
        let j = (c / nx) % ny;
        let k = c / sz;
        let xc = x[c];
        let mut acc = 0.0;
        if i > 0 {
            acc += xc - x[c - 1];
        }
        if i + 1 < nx {
            acc += xc - x[c + 1];
        }
        if j > 0 {
            acc += xc - x[c - sy];
        }
        if j + 1 < ny {
            acc += xc - x[c + sy];
        }
        if k > 0 {
            acc += xc - x[c - sz];
        }
        if k + 1 < nz {
            acc += xc - x[c + sz];
        }
        *o = acc;
    });
}

/// `h²·DᵀV`.
fn divergence_rhs(v: &VectorGrid) -> Vec<f64> {
    let [nx, ny, nz] = v.dims;
    let (sy, sz) = (nx, nx * ny);
    let h = v.voxel_size;
    (0..nx * ny * nz)
        .into_par_iter()
        .map(|c| {
            let i = c % nx;
            let j = (c / nx) % ny;
            let k = c / sz;
            let mut acc = 0.0;
            if i + 1 < nx {
                acc -= v.values[c].x;
            }
            if i > 0 {
                acc += v.values[c - 1].x;
            }
            if j + 1 < ny {
                acc -= v.values[c].y;
            }
            if j > 0 {
                acc += v.values[c - sy].y;
            }
            if k + 1 < nz {
                acc -= v.values[c].z;
            }
            if k > 0 {
                acc += v.values[c - sz].z;
            }
            acc * h
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `DᵀD χ = DᵀV` by conjugate gradients to the given relative
/// residual, then subtracts the mean of `χ`.
pub fn solve_poisson(v: &VectorGrid, tolerance: f64, max_iterations: usize) -> (ScalarGrid, CgStats) {
    let b = divergence_rhs(v);
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let bnorm = dot(&b, &b).sqrt();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    if bnorm > 0.0 {
        while iterations < max_iterations && rr.sqrt() > tolerance * bnorm {
            laplacian(v.dims, &p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rr / pap;
            x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
            r.par_iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            p.par_iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
            iterations += 1;
        }
    }
    let mean = sum(&x) / n as f64;
    x.par_iter_mut().for_each(|xi| *xi -= mean);
    let grid = ScalarGrid {
        origin: v.origin,
        voxel_size: v.voxel_size,
        dims: v.dims,
        values: x,
    };
    let stats = CgStats {
        iterations,
        relative_residual: if bnorm > 0.0 { rr.sqrt() / bnorm } else { 0.0 },
    };
    (grid, stats)
}

/// Discrete `∫‖∇χ − V‖²` over all grid edges.
pub fn dirichlet_energy(chi: &ScalarGrid, v: &VectorGrid) -> f64 {
    let g = VectorGrid::gradient_of(chi);
    let [nx, ny, nz] = chi.dims;
    let h3 = chi.voxel_size.powi(3);
    let mut e = 0.0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = chi.index(i, j, k);
                let d = g.values[c] - v.values[c];
                if i + 1 < nx {
                    e += d.x * d.x;
                }
                if j + 1 < ny {
                    e += d.y * d.y;
                }
                if k + 1 < nz {
                    e += d.z * d.z;
                }
            }
        }
    }
    e * h3
}

/// How the extraction level is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum IsoPolicy {
    /// Mean of `χ` interpolated at the input samples.
    #[default]
    MeanAtSamples,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonParams {
    /// mm
    pub voxel_size: f64,
    /// Empty voxels around the samples' bounding box.
    pub padding: usize,
    /// Largest allowed node count.
    pub cell_budget: usize,
    pub iso: IsoPolicy,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for PoissonParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.25,
            padding: 12,
            cell_budget: 20_000_000,
            iso: IsoPolicy::MeanAtSamples,
            cg_tolerance: 1e-6,
            cg_max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonOutcome {
    pub mesh: TriangleMesh,
    pub iso_value: f64,
    pub dims: [usize; 3],
    pub cg: CgStats,
}

/// Neighbors used for the per-sample area estimate.
const AREA_K: usize = 8;

/// Splats inward normals, weighted by each sample's estimated surface
/// area, onto the edge midpoints with trilinear weights.
pub fn splat_normals(cloud: &PointCloud, origin: Point3, voxel_size: f64, dims: [usize; 3]) -> Result<VectorGrid> {
    let normals = cloud.normals().ok_or(Error::MissingNormals)?;
    let areas = sample_areas(cloud)?;
    let mut v = VectorGrid::zeros(origin, voxel_size, dims);
    let h = voxel_size;
    let scale = 1.0 / (h * h * h);
    for ((p, n), area) in cloud.points().iter().zip(normals).zip(&areas) {
        let g = (p - origin) / h;
        for a in 0..3 {
            let mut base = [0i64; 3];
            let mut frac = [0.0; 3];
            for b in 0..3 {
                let x = if a == b { g[b] - 0.5 } else { g[b] };
                base[b] = x.floor() as i64;
                frac[b] = x - base[b] as f64;
            }
            let val = -n[a] * area * scale;
            for corner in 0..8 {
                let mut w = 1.0;
                let mut idx = [0usize; 3];
                let mut inside = true;
                for b in 0..3 {
                    let bit = (corner >> b) & 1;
                    let i = base[b] + bit as i64;
                    if i < 0 || i as usize >= dims[b] {
                        inside = false;
                        break;
                    }
                    idx[b] = i as usize;
                    w *= if bit == 1 { frac[b] } else { 1.0 - frac[b] };
                }
                if inside {
                    let c = v.index(idx[0], idx[1], idx[2]);
                    v.values[c][a] += w * val;
                }
            }
        }
    }
    Ok(v)
}

/// `π·r²/k` with `r` the distance to the k-th neighbor.
fn sample_areas(cloud: &PointCloud) -> Result<Vec<f64>> {
    let k = AREA_K.min(cloud.len().saturating_sub(1));
    if k == 0 {
        return Ok(vec![1.0; cloud.len()]);
    }
    let tree = KdTree::build(cloud)?;
    cloud
        .points()
        .par_iter()
        .map(|p| {
            let hits = tree.k_nearest(p, k + 1)?;
            let r = hits.last().expect("k + 1 ≥ 1").distance;
            Ok(std::f64::consts::PI * r * r / k as f64)
        })
        .collect()
}

/// Oriented samples to a triangle mesh.
pub fn poisson_reconstruct(cloud: &PointCloud, params: &PoissonParams) -> Result<PoissonOutcome> {
    if cloud.normals().is_none() {
        return Err(Error::MissingNormals);
    }
    if !(params.voxel_size > 0.0 && params.voxel_size.is_finite()) {
        return Err(Error::invalid("voxel size must be positive"));
    }
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let h = params.voxel_size;
    let pad = params.padding.max(1) as f64;
    let origin = lo - Vec3::repeat(pad * h);
    let mut dims = [0usize; 3];
    let mut cells: f64 = 1.0;
    for a in 0..3 {
        let n = ((hi[a] - lo[a]) / h).ceil() + 2.0 * pad + 1.0;
        cells *= n;
        dims[a] = n as usize;
    }
    if cells > params.cell_budget as f64 {
        return Err(Error::GridBudget {
            cells: cells.min(usize::MAX as f64) as usize,
            budget: params.cell_budget,
        });
    }
    let v = splat_normals(cloud, origin, h, dims)?;
    let (chi, cg) = solve_poisson(&v, params.cg_tolerance, params.cg_max_iterations);
    let iso_value = match params.iso {
        IsoPolicy::Fixed(x) => x,
        IsoPolicy::MeanAtSamples => {
            let vals: Vec<f64> = cloud.points().iter().map(|p| chi.sample(p)).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let mesh = marching_tetrahedra(&chi, iso_value)?;
    Ok(PoissonOutcome {
        mesh,
        iso_value,
        dims,
        cg,
    })
}

/// Cube corner `c` (bits x, y, z) as an offset.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Kuhn split: each tetrahedron walks from corner 0 to corner 7 adding one
/// axis at a time.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Isosurface `χ = iso` separating nodes with `χ > iso` (inside) from the
/// rest. Triangles are wound counter-clockwise seen from outside.
pub fn marching_tetrahedra(chi: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    let [nx, ny, nz] = chi.dims;
    let mut vertices: Vec<Point3> = Vec::new();
    let mut keys: HashMap<(usize, usize), u32> = HashMap::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    if nx < 2 || ny < 2 || nz < 2 {
        return TriangleMesh::new(vertices, triangles);
    }
    let val = |c: usize| chi.values[c];
    let pos = |c: usize| chi.node(c % nx, (c / nx) % ny, c / (nx * ny));
    let mut vertex = |a: usize, b: usize, vertices: &mut Vec<Point3>| -> u32 {
        let key = if a < b { (a, b) } else { (b, a) };
        *keys.entry(key).or_insert_with(|| {
            let (va, vb) = (val(key.0), val(key.1));
            let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
            let p = pos(key.0) + (pos(key.1) - pos(key.0)) * t;
            vertices.push(p);
            (vertices.len() - 1) as u32
        })
    };
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corners: [usize; 8] = std::array::from_fn(|c| {
                    let o = corner_offset(c);
                    chi.index(i + o[0], j + o[1], k + o[2])
                });
                let inside_count = corners.iter().filter(|&&c| val(c) > iso).count();
                if inside_count == 0 || inside_count == 8 {
                    continue;
                }
                for tet in TETS {
                    let nodes = tet.map(|c| corners[c]);
                    let (ins, outs): (Vec<usize>, Vec<usize>) = nodes.iter().partition(|&&n| val(n) > iso);
                    let tris: Vec<[(usize, usize); 3]> = match (ins.len(), outs.len()) {
                        (1, 3) => vec![[(ins[0], outs[0]), (ins[0], outs[1]), (ins[0], outs[2])]],
                        (3, 1) => vec![[(outs[0], ins[0]), (outs[0], ins[1]), (outs[0], ins[2])]],
                        (2, 2) => vec![
                            [(ins[0], outs[0]), (ins[0], outs[1]), (ins[1], outs[1])],
                            [(ins[0], outs[0]), (ins[1], outs[1]), (ins[1], outs[0])],
                        ],
                        _ => continue,
                    };
                    let cin = ins.iter().fold(Vec3::zeros(), |a, &n| a + pos(n).coords) / ins.len() as f64;
                    let cout = outs.iter().fold(Vec3::zeros(), |a, &n| a + pos(n).coords) / outs.len() as f64;
                    let outward = cout - cin;
                    for tri in tris {
                        let mut t = tri.map(|(a, b)| vertex(a, b, &mut vertices));
                        let [a, b, c] = t.map(|v| vertices[v as usize]);
                        // Winding from the exact crossing geometry can be
                        // zero-area; fall back to the edge midpoints then.
                        let mut nrm = (b - a).cross(&(c - a));
                        if nrm.norm_squared() == 0.0 {
                            let mid = |(x, y): (usize, usize)| (pos(x).coords + pos(y).coords) / 2.0;
                            let [ma, mb, mc] = tri.map(mid);
                            nrm = (mb - ma).cross(&(mc - ma));
                        }
                        if nrm.dot(&outward) < 0.0 {
                            t.swap(1, 2);
                        }
                        triangles.push(t);
                    }
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BASE_FRAME;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plane_normals_face_the_hint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..400)
            .map(|_| Point3::new(rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0, 0.0))
            .collect();
        let c = PointCloud::new(pts, BASE_FRAME).unwrap();
        let est = estimate_normals(&c, 10, &[Point3::new(2.0, 2.0, 50.0)]).unwrap();
        assert!(est.excluded.is_empty());
        for n in est.cloud.normals().unwrap() {
            assert!((n - Vec3::z()).norm() < 1e-6);
        }
    }

    #[test]
    fn collinear_points_are_excluded() {
        let mut pts: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        pts.extend((0..20).map(|i| Point3::new(100.0 + (i % 5) as f64, (i / 5) as f64, 0.0)));
        let c = PointCloud::new(pts, BASE_FRAME).unwrap();
        let est = estimate_normals(&c, 5, &[]).unwrap();
        assert!(est.excluded.contains(&5));
        assert!(!est.excluded.contains(&30));
        assert!(estimate_normals(&c, 40, &[]).is_err());
    }

    #[test]
    fn quadratic_potential_is_recovered() {
        let dims = [18, 15, 12];
        let mut phi = ScalarGrid::zeros(Point3::new(-1.0, 0.5, 2.0), 0.25, dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = phi.node(i, j, k);
                    let c = phi.index(i, j, k);
                    phi.values[c] = p.x * p.x - 0.5 * p.y * p.z + 2.0 * p.z + 0.3 * p.y * p.y;
                }
            }
        }
        let v = VectorGrid::gradient_of(&phi);
        let (chi, stats) = solve_poisson(&v, 1e-12, 10_000);
        assert!(stats.relative_residual <= 1e-12);
        let mean = phi.values.iter().sum::<f64>() / phi.values.len() as f64;
        let err = chi
            .values
            .iter()
            .zip(&phi.values)
            .map(|(a, b)| (a - (b - mean)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-4, "{err}");
        assert!(dirichlet_energy(&chi, &v) <= dirichlet_energy(&ScalarGrid::zeros(chi.origin, 0.25, dims), &v));
    }

    #[test]
    fn single_tetrahedron_cases_are_closed() {
        // One inside node in an otherwise outside grid: a closed blob.
        let mut g = ScalarGrid::zeros(Point3::origin(), 1.0, [3, 3, 3]);
        let c = g.index(1, 1, 1);
        g.values[c] = 1.0;
        let m = marching_tetrahedra(&g, 0.5).unwrap();
        assert!(m.is_watertight() && m.is_edge_manifold());
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn missing_normals_and_budget() {
        let c = PointCloud::new(vec![Point3::origin(); 4], BASE_FRAME).unwrap();
        assert!(matches!(poisson_reconstruct(&c, &PoissonParams::default()), Err(Error::MissingNormals)));
        let pts = vec![Point3::origin(), Point3::new(100.0, 100.0, 100.0)];
        let c = PointCloud::with_attributes(pts, None, Some(vec![Vec3::z(); 2]), BASE_FRAME).unwrap();
        let p = PoissonParams { voxel_size: 0.1, ..PoissonParams::default() };
        assert!(matches!(poisson_reconstruct(&c, &p), Err(Error::GridBudget { .. })));
    }

    fn fibonacci_sphere(n: usize, r: f64) -> Vec<Point3> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let rho = (1.0 - y * y).sqrt();
                let t = golden * i as f64;
                Point3::new(r * rho * t.cos(), r * y, r * rho * t.sin())
            })
            .collect()
    }

    #[test]
    fn sphere_normals_point_outward() {
        let pts = fibonacci_sphere(4000, 5.0);
        let c = PointCloud::new(pts, BASE_FRAME).unwrap();
        let hints: Vec<Point3> = [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z(), -Vec3::z()]
            .iter()
            .map(|d| Point3::from(d * 100.0))
            .collect();
        let est = estimate_normals(&c, 16, &hints).unwrap();
        let good = est
            .cloud
            .points()
            .iter()
            .zip(est.cloud.normals().unwrap())
            .filter(|(p, n)| n.dot(&p.coords.normalize()) >= 5f64.to_radians().cos())
            .count();
        assert!(good as f64 >= 0.99 * c.len() as f64, "{good}");
    }

    #[test]
    fn sphere_reconstructs_closed() {
        let pts = fibonacci_sphere(20_000, 5.0);
        let normals = pts.iter().map(|p| p.coords / 5.0).collect();
        let c = PointCloud::with_attributes(pts, None, Some(normals), BASE_FRAME).unwrap();
        let out = poisson_reconstruct(&c, &PoissonParams::default()).unwrap();
        let m = &out.mesh;
        assert!(m.is_watertight() && m.is_edge_manifold());
        assert_eq!(m.euler_characteristic(), 2);
        let worst = m.vertices().iter().map(|v| (v.coords.norm() - 5.0).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 * 0.25, "{worst}");
        assert!(out.cg.relative_residual <= 1e-6);
    }

    #[test]
    fn open_patch_is_not_watertight() {
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let n = vec![Vec3::z(); pts.len()];
        let c = PointCloud::with_attributes(pts, None, Some(n), BASE_FRAME).unwrap();
        let out = poisson_reconstruct(&c, &PoissonParams::default()).unwrap();
        assert!(!out.mesh.is_empty());
        assert!(!out.mesh.is_watertight());
    }
}
