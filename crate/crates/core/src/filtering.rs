//! Point cloud cleanup: statistical outlier removal, box/color conditions,
//! and moving-least-squares smoothing.

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Vec3};
use crate::kdtree::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SorParams {
    pub k: usize,
    pub alpha: f64,
}

impl Default for SorParams {
    fn default() -> Self {
        Self { k: 20, alpha: 1.0 }
    }
}

impl SorParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("SOR k must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("SOR alpha must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SorOutcome {
    pub cloud: PointCloud,
    /// Ascending input indices of dropped points.
    pub removed: Vec<usize>,
    /// Mean distance to the `k` nearest other points, per input point.
    pub mean_distances: Vec<f64>,
    pub threshold: f64,
}

/// Mean distance from each point to its `k` nearest other points.
pub fn mean_neighbor_distances(tree: &KdTree, k: usize) -> Result<Vec<f64>> {
    let n = tree.len();
    if k >= n {
        return Err(Error::NeighborCount { k, size: n });
    }
    tree.points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let hits = tree.k_nearest(p, k + 1)?;
            // Self is absent only when more than k lower-index duplicates exist.
            let mut sum = 0.0;
            let mut taken = 0;
            for h in hits.iter().filter(|h| h.index != i).take(k) {
                sum += h.distance;
                taken += 1;
            }
            debug_assert_eq!(taken, k);
            Ok(sum / k as f64)
        })
        .collect()
}

/// Keeps points whose mean k-NN distance is at most `μ + α·σ`, where `μ`
/// and `σ` are the mean and sample standard deviation over the cloud.
pub fn sor_filter(cloud: &PointCloud, p: &SorParams) -> Result<SorOutcome> {
    p.validate()?;
    if cloud.len() <= p.k {
        return Err(Error::NeighborCount {
            k: p.k,
            size: cloud.len(),
        });
    }
    let tree = KdTree::build(cloud)?;
    let mean_distances = mean_neighbor_distances(&tree, p.k)?;
    let threshold = sor_threshold(&mean_distances, p.alpha);
    let (kept, removed): (Vec<usize>, Vec<usize>) =
        (0..cloud.len()).partition(|&i| mean_distances[i] <= threshold);
    Ok(SorOutcome {
        cloud: cloud.select(&kept),
        removed,
        mean_distances,
        threshold,
    })
}

/// `μ + α·σ` with the sample (n − 1) standard deviation.
pub fn sor_threshold(mean_distances: &[f64], alpha: f64) -> f64 {
    let n = mean_distances.len() as f64;
    let mu = mean_distances.iter().sum::<f64>() / n;
    let var = if n > 1.0 {
        mean_distances.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    mu + alpha * var.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SpatialBox {
    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorRange {
    pub min: [u8; 3],
    pub max: [u8; 3],
}

impl ColorRange {
    pub fn contains(&self, c: &[u8; 3]) -> bool {
        (0..3).all(|i| c[i] >= self.min[i] && c[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConditionalParams {
    pub spatial_box: Option<SpatialBox>,
    pub color_range: Option<ColorRange>,
}

impl ConditionalParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = &self.spatial_box {
            if !(0..3).all(|i| b.min[i] <= b.max[i]) {
                return Err(Error::invalid("spatial box needs min ≤ max on every axis"));
            }
        }
        if let Some(c) = &self.color_range {
            if !(0..3).all(|i| c.min[i] <= c.max[i]) {
                return Err(Error::invalid("color range needs min ≤ max on every channel"));
            }
        }
        Ok(())
    }
}

/// Indices of points passing every configured condition, in input order.
pub fn conditional_mask(cloud: &PointCloud, p: &ConditionalParams) -> Vec<usize> {
    let colors = match (p.color_range, cloud.colors()) {
        (Some(_), None) => {
            warn!("color condition ignored: cloud has no colors");
            None
        }
        (Some(r), Some(c)) => Some((r, c)),
        _ => None,
    };
    (0..cloud.len())
        .filter(|&i| {
            p.spatial_box.is_none_or(|b| b.contains(&cloud.points()[i]))
                && colors.is_none_or(|(r, c)| r.contains(&c[i]))
        })
        .collect()
}

pub fn conditional_filter(cloud: &PointCloud, p: &ConditionalParams) -> PointCloud {
    cloud.select(&conditional_mask(cloud, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlsParams {
    /// mm
    pub radius: f64,
    /// 1 fits the local plane, 2 a quadratic height field over it.
    pub polynomial_order: u8,
    /// mm
    pub weight_sigma: f64,
}

impl Default for MlsParams {
    fn default() -> Self {
        Self {
            radius: 1.0,
            polynomial_order: 2,
            weight_sigma: 0.5,
        }
    }
}

impl MlsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid("MLS radius must be positive"));
        }
        if !(self.weight_sigma > 0.0 && self.weight_sigma.is_finite()) {
            return Err(Error::invalid("MLS weight sigma must be positive"));
        }
        if !matches!(self.polynomial_order, 1 | 2) {
            return Err(Error::invalid("MLS polynomial order must be 1 or 2"));
        }
        Ok(())
    }

    fn terms(&self) -> usize {
        if self.polynomial_order == 1 {
            3
        } else {
            6
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlsOutcome {
    pub cloud: PointCloud,
    /// Points left in place: too few neighbors, a singular fit, or a
    /// projection farther than the radius.
    pub passed_through: usize,
}

/// Projects every point onto the Gaussian-weighted least-squares surface of
/// its radius neighborhood. Colors are kept; normals are dropped.
pub fn mls_smooth(cloud: &PointCloud, p: &MlsParams) -> Result<MlsOutcome> {
    p.validate()?;
    if cloud.is_empty() {
        return Ok(MlsOutcome {
            cloud: cloud.clone(),
            passed_through: 0,
        });
    }
    let tree = KdTree::build(cloud)?;
    let moved: Vec<Option<Point3>> = cloud
        .points()
        .par_iter()
        .map(|q| mls_project(&tree, q, p))
        .collect();
    let passed_through = moved.iter().filter(|m| m.is_none()).count();
    let points = moved
        .iter()
        .zip(cloud.points())
        .map(|(m, q)| m.unwrap_or(*q))
        .collect();
    Ok(MlsOutcome {
        cloud: cloud.with_points(points)?.without_normals(),
        passed_through,
    })
}

fn mls_project(tree: &KdTree, q: &Point3, p: &MlsParams) -> Option<Point3> {
    let hood = tree.radius_search(q, p.radius);
    if hood.len() < p.terms() {
        return None;
    }
    let s2 = p.weight_sigma * p.weight_sigma;
    let pts: Vec<(Point3, f64)> = hood
        .iter()
        .map(|h| (tree.points()[h.index], (-h.distance * h.distance / s2).exp()))
        .collect();
    let wsum: f64 = pts.iter().map(|(_, w)| w).sum();
    let centroid = pts
        .iter()
        .fold(Vec3::zeros(), |acc, (x, w)| acc + x.coords * *w)
        / wsum;
    let cov = pts.iter().fold(Matrix3::zeros(), |acc, (x, w)| {
        let d = x.coords - centroid;
        acc + d * d.transpose() * *w
    }) / wsum;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = eig.eigenvalues[order[2]];
    // Collinear neighborhood: the plane is undetermined.
    if !(scale > 0.0) || eig.eigenvalues[order[1]] <= 1e-12 * scale {
        return None;
    }
    let n: Vec3 = eig.eigenvectors.column(order[0]).into();
    let e1: Vec3 = eig.eigenvectors.column(order[2]).into();
    let e2 = n.cross(&e1);
    let c = Point3::from(centroid);
    let local = |x: &Point3| {
        let d = x - c;
        (d.dot(&e1), d.dot(&e2), d.dot(&n))
    };
    let (uq, vq, hq) = local(q);
    let out = if p.polynomial_order == 1 {
        q - n * hq
    } else {
        let m = pts.len();
        let mut a = DMatrix::zeros(m, 6);
        let mut b = DVector::zeros(m);
        for (r, (x, w)) in pts.iter().enumerate() {
            let (u, v, h) = local(x);
            let sw = w.sqrt();
            for (col, t) in [1.0, u, v, u * u, u * v, v * v].into_iter().enumerate() {
                a[(r, col)] = t * sw;
            }
            b[r] = h * sw;
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-9 * smax {
            return None;
        }
        let coef = svd.solve(&b, 0.0).ok()?;
        let basis = [1.0, uq, vq, uq * uq, uq * vq, vq * vq];
        let h: f64 = basis.iter().zip(coef.iter()).map(|(t, k)| t * k).sum();
        c + e1 * uq + e2 * vq + n * h
    };
    ((out - q).norm() <= p.radius && out.iter().all(|v| v.is_finite())).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BASE_FRAME;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn lattice(n: usize, spacing: f64) -> Vec<Point3> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    v.push(Point3::new(i as f64, j as f64, k as f64) * spacing);
                }
            }
        }
        v
    }

    /// Brute-force SOR: full sort of distances to every other point.
    pub(crate) fn sor_oracle(points: &[Point3], k: usize, alpha: f64) -> Vec<usize> {
        let means: Vec<f64> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<(f64, usize)> = points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, q)| {
                        let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
                        ((dx * dx + dy * dy + dz * dz).sqrt(), j)
                    })
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d[..k].iter().map(|x| x.0).sum::<f64>() / k as f64
            })
            .collect();
        let n = means.len() as f64;
        let mu = means.iter().sum::<f64>() / n;
        let sd = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        (0..points.len()).filter(|&i| means[i] > mu + alpha * sd).collect()
    }

    #[test]
    fn lattice_loses_only_its_corners() {
        // Boundary points have sparser neighborhoods; on a 10³ lattice at
        // k = 20 the eight corners sit 4.24σ above the mean.
        let c = PointCloud::new(lattice(10, 1.0), BASE_FRAME).unwrap();
        let out = sor_filter(&c, &SorParams { k: 20, alpha: 3.0 }).unwrap();
        assert_eq!(out.removed, vec![0, 9, 90, 99, 900, 909, 990, 999]);
        assert_eq!(out.removed, sor_oracle(c.points(), 20, 3.0));
        let out = sor_filter(&c, &SorParams { k: 20, alpha: 4.5 }).unwrap();
        assert!(out.removed.is_empty());
        assert_eq!(out.cloud, c);
    }

    #[test]
    fn displaced_point_is_the_only_removal() {
        let mut pts = lattice(10, 1.0);
        pts[555] = Point3::new(100.0, 4.0, 4.0);
        let c = PointCloud::new(pts, BASE_FRAME).unwrap();
        let out = sor_filter(&c, &SorParams { k: 20, alpha: 1.0 }).unwrap();
        assert_eq!(out.removed, vec![555]);
    }

    #[test]
    fn sor_requires_more_points_than_k() {
        let c = PointCloud::new(lattice(2, 1.0), BASE_FRAME).unwrap();
        assert!(matches!(
            sor_filter(&c, &SorParams { k: 8, alpha: 1.0 }),
            Err(Error::NeighborCount { .. })
        ));
    }

    #[test]
    fn sor_matches_oracle_and_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, k, alpha) in &[(300, 5, 0.0), (500, 20, 1.0), (400, 50, 2.0)] {
            let pts: Vec<Point3> = (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random::<f64>() * 0.1))
                .collect();
            let c = PointCloud::new(pts.clone(), BASE_FRAME).unwrap();
            let out = sor_filter(&c, &SorParams { k, alpha }).unwrap();
            assert_eq!(out.removed, sor_oracle(&pts, k, alpha));
            assert_eq!(out.cloud.len() + out.removed.len(), n);
        }
    }

    #[test]
    fn conditional_identities_and_idempotence() {
        let c = PointCloud::with_attributes(
            lattice(4, 0.5),
            Some((0..64).map(|i| [i as u8 * 4, 0, 0]).collect()),
            None,
            BASE_FRAME,
        )
        .unwrap();
        assert_eq!(conditional_filter(&c, &ConditionalParams::default()), c);
        let (lo, hi) = c.bounds().unwrap();
        let bbox = SpatialBox { min: lo.into(), max: hi.into() };
        let p = ConditionalParams { spatial_box: Some(bbox), color_range: None };
        assert_eq!(conditional_filter(&c, &p), c);
        let p = ConditionalParams {
            spatial_box: Some(SpatialBox { min: [0.0; 3], max: [1.0, 1.0, 0.6] }),
            color_range: Some(ColorRange { min: [0, 0, 0], max: [200, 255, 255] }),
        };
        let once = conditional_filter(&c, &p);
        assert!(once.len() < c.len() && !once.is_empty());
        assert_eq!(conditional_filter(&once, &p), once);
    }

    fn noisy_plane(n: usize, sigma: f64, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| {
                let z = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                Point3::new(rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0, z)
            })
            .collect()
    }

    #[test]
    fn plane_is_a_fixed_point() {
        let c = PointCloud::new(noisy_plane(1500, 0.0, 1), BASE_FRAME).unwrap();
        let p = MlsParams { polynomial_order: 1, ..MlsParams::default() };
        let out = mls_smooth(&c, &p).unwrap();
        for (a, b) in out.cloud.points().iter().zip(c.points()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn noisy_plane_rms_halves() {
        let rms = |c: &PointCloud| {
            (c.points().iter().map(|p| p.z * p.z).sum::<f64>() / c.len() as f64).sqrt()
        };
        let c = PointCloud::new(noisy_plane(2000, 0.05, 2), BASE_FRAME).unwrap();
        for order in [1, 2] {
            let p = MlsParams { polynomial_order: order, ..MlsParams::default() };
            let out = mls_smooth(&c, &p).unwrap();
            let (before, after) = (rms(&c), rms(&out.cloud));
            assert!(after <= 0.5 * before, "order {order}: {before} -> {after}");
            for (a, b) in out.cloud.points().iter().zip(c.points()) {
                assert!((a - b).norm() <= p.radius);
            }
        }
    }

    #[test]
    fn paraboloid_residual_shrinks() {
        let surf = |x: f64, y: f64| 0.05 * (x * x + y * y);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.03).unwrap();
        let pts: Vec<Point3> = (0..3000)
            .map(|_| {
                let (x, y) = (rng.random::<f64>() * 8.0 - 4.0, rng.random::<f64>() * 8.0 - 4.0);
                Point3::new(x, y, surf(x, y) + noise.sample(&mut rng))
            })
            .collect();
        let c = PointCloud::new(pts, BASE_FRAME).unwrap();
        let out = mls_smooth(&c, &MlsParams::default()).unwrap();
        // Vertical residual is a close proxy for surface distance at this slope.
        let resid = |c: &PointCloud| {
            let inner: Vec<f64> = c
                .points()
                .iter()
                .filter(|p| p.x.abs() < 3.0 && p.y.abs() < 3.0)
                .map(|p| (p.z - surf(p.x, p.y)).powi(2))
                .collect();
            (inner.iter().sum::<f64>() / inner.len() as f64).sqrt()
        };
        assert!(resid(&out.cloud) < 0.6 * resid(&c), "{} vs {}", resid(&out.cloud), resid(&c));
    }

    #[test]
    fn isolated_points_pass_through() {
        let pts = vec![Point3::origin(), Point3::new(5.0, 0.0, 0.0), Point3::new(0.0, 5.0, 0.0)];
        let c = PointCloud::new(pts, BASE_FRAME).unwrap();
        let out = mls_smooth(&c, &MlsParams::default()).unwrap();
        assert_eq!(out.passed_through, 3);
        assert_eq!(out.cloud, c);
        assert!(mls_smooth(&c, &MlsParams { radius: 0.0, ..MlsParams::default() }).is_err());
    }
}
