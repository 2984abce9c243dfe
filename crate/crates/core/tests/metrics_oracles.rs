//! Randomized equivalence of the evaluation metrics and denoiser losses
//! against brute-force oracles.

use pcclean_core::denoiser::{loss_r, loss_s, GroundTruthNeighborhood};
use pcclean_core::eval::{aupr, chamfer_distance, pr_curve};
use pcclean_core::geometry::{Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::from_points(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect(),
    )
}

/// O(n·m) double loop, no spatial index.
fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let min_to = |p: Point3, other: &PointCloud| -> f64 {
        other
            .points()
            .iter()
            .map(|q| p.dist_sq(*q))
            .fold(f64::INFINITY, f64::min)
    };
    let sa: f64 = a.points().iter().map(|&p| min_to(p, b)).sum();
    let sb: f64 = b.points().iter().map(|&q| min_to(q, a)).sum();
    sa / a.len() as f64 + sb / b.len() as f64
}

/// Enumerates every distinct threshold, recomputing precision and recall
/// from scratch with the strict > rule each time, then sums the steps.
fn brute_aupr(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    // sweeping thresholds downward: at each distinct score s the positive
    // set is {score >= s}, which equals {score > t} for any t just below s
    for &s in &thresholds {
        let mut tp = 0.0;
        let mut pred = 0.0;
        for (&sc, &l) in scores.iter().zip(labels) {
            if sc >= s {
                pred += 1.0;
                if l {
                    tp += 1.0;
                }
            }
        }
        let precision = tp / pred;
        let recall = tp / positives;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

#[test]
fn chamfer_matches_brute_force_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..100 {
        let n = rng.gen_range(1..=300);
        let m = rng.gen_range(1..=300);
        let a = random_cloud(&mut rng, n);
        let b = random_cloud(&mut rng, m);
        let fast = chamfer_distance(&a, &b).unwrap();
        let slow = brute_chamfer(&a, &b);
        let rel = (fast - slow).abs() / slow.abs().max(1e-300);
        assert!(rel < 1e-12, "trial {trial}: {fast} vs {slow} (rel {rel})");
    }
}

#[test]
fn chamfer_invariant_under_rigid_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_cloud(&mut rng, 120);
    let b = random_cloud(&mut rng, 80);
    let base = chamfer_distance(&a, &b).unwrap();
    // rotation about z by 37 degrees plus a translation
    let (s, c) = 37f64.to_radians().sin_cos();
    let motion = |p: &Point3| {
        Point3::new(
            c * p.x - s * p.y + 5.0,
            s * p.x + c * p.y - 2.0,
            p.z + 0.75,
        )
    };
    let am = PointCloud::from_points(a.points().iter().map(motion).collect());
    let bm = PointCloud::from_points(b.points().iter().map(motion).collect());
    let moved = chamfer_distance(&am, &bm).unwrap();
    assert!((base - moved).abs() < 1e-10, "{base} vs {moved}");
}

#[test]
fn aupr_matches_enumeration_oracle_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..100 {
        let n = rng.gen_range(2..=50);
        // quantized scores force plenty of ties
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.gen_range(0.0f64..1.0) * 10.0).round() / 10.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        if !labels.iter().any(|&l| l) {
            labels[0] = true;
        }
        let fast = aupr(&scores, &labels).unwrap();
        let slow = brute_aupr(&scores, &labels);
        assert!(
            (fast - slow).abs() < 1e-12,
            "trial {trial}: {fast} vs {slow}"
        );
    }
}

#[test]
fn aupr_invariant_under_monotone_score_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..20 {
        let n = rng.gen_range(5..=60);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        if !labels.iter().any(|&l| l) {
            labels[0] = true;
        }
        let base = aupr(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 11.0).collect();
        assert!((aupr(&exp, &labels).unwrap() - base).abs() < 1e-12);
        assert!((aupr(&affine, &labels).unwrap() - base).abs() < 1e-12);
    }
}

#[test]
fn losses_match_exhaustive_scan_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(321);
    for _ in 0..100 {
        let n = rng.gen_range(1..=100);
        let pts: Vec<Point3> = (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let p = Point3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        let neigh = GroundTruthNeighborhood::new(pts.clone()).unwrap();
        let mut min_d = f64::INFINITY;
        let mut max_d = f64::NEG_INFINITY;
        for q in &pts {
            let d = p.dist_sq(*q);
            min_d = min_d.min(d);
            max_d = max_d.max(d);
        }
        assert_eq!(loss_s(p, &neigh), min_d);
        assert_eq!(loss_r(p, &neigh), max_d);
    }
}

#[test]
fn pr_curve_csv_has_header_and_rows() {
    let scores = [0.9, 0.1, 0.5];
    let labels = [true, false, true];
    let csv = pr_curve(&scores, &labels).unwrap().to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "recall,precision");
    assert_eq!(lines.len(), 4);
}
