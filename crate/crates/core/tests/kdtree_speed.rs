use std::time::Instant;

use ntcr_recon::{KdTree, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 100_000;
// Brute force is timed on a slice of the queries and scaled up.
const BRUTE_QUERIES: usize = 1_000;
const MIN_SPEEDUP: f64 = 20.0;

#[test]
#[ignore = "timing check; run with --ignored in release-like builds"]
fn nearest_queries_beat_a_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut cloud = || -> Vec<Point3> {
        (0..N).map(|_| Point3::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect()
    };
    let (pts, queries) = (cloud(), cloud());

    let tree = KdTree::from_points(&pts).unwrap();
    let t = Instant::now();
    let tree_sum: usize = queries.iter().map(|q| tree.nearest(q).index).sum();
    let tree_time = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut brute_sum = 0usize;
    for q in &queries[..BRUTE_QUERIES] {
        let best = (0..N).min_by(|&a, &b| (pts[a] - q).norm_squared().total_cmp(&(pts[b] - q).norm_squared())).unwrap();
        brute_sum += best;
    }
    let brute_time = t.elapsed().as_secs_f64() * (N / BRUTE_QUERIES) as f64;

    let head: usize = queries[..BRUTE_QUERIES].iter().map(|q| tree.nearest(q).index).sum();
    assert_eq!(head, brute_sum);
    assert!(tree_sum > 0);
    let speedup = brute_time / tree_time;
    println!("tree {tree_time:.3}s, brute (scaled) {brute_time:.1}s, speedup {speedup:.0}x");
    assert!(speedup >= MIN_SPEEDUP, "speedup {speedup:.1}");
}
