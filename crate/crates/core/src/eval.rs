//! Evaluation surface: Chamfer Distance, precision-recall / AUPR, and
//! per-point inference timing.

use crate::detector::{patch_for_point, PatchParams};
use crate::error::{Error, Result};
use crate::geometry::{bounding_box, PointCloud, SpatialIndex};
use crate::network::{
    denoiser_displacement, detector_probability, ModelConfig, ModelKind, ModelParams,
};
use std::time::{Duration, Instant};

/// Symmetric sum of mean squared nearest-neighbor distances:
/// mean over A of d²(a, B) plus mean over B of d²(b, A).
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index_a = SpatialIndex::build(a)?;
    let index_b = SpatialIndex::build(b)?;
    let mut sum_ab = 0.0;
    for p in a.points() {
        let (_, d) = index_b.k_nearest(*p, 1)[0];
        sum_ab += d * d;
    }
    let mut sum_ba = 0.0;
    for q in b.points() {
        let (_, d) = index_a.k_nearest(*q, 1)[0];
        sum_ba += d * d;
    }
    Ok(sum_ab / a.len() as f64 + sum_ba / b.len() as f64)
}

/// Precision-recall pairs swept over the distinct score values, from the
/// highest threshold down. The predicted-positive set at each step is
/// "score strictly greater than the next distinct value", so the sweep
/// visits exactly the achievable classifier outcomes.
#[derive(Debug, Clone)]
pub struct PRCurve {
    /// (recall, precision) per step, recall non-decreasing.
    pub points: Vec<(f64, f64)>,
}

impl PRCurve {
    /// Area by the step-wise average-precision rule: Σ (R_i − R_{i−1})·P_i.
    pub fn area(&self) -> f64 {
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for &(recall, precision) in &self.points {
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    }

    /// Comma-separated `recall,precision` lines for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("recall,precision\n");
        for (r, p) in &self.points {
            out.push_str(&format!("{r},{p}\n"));
        }
        out
    }
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PRCurve> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "scores vs labels",
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let total_positives = labels.iter().filter(|&&l| l).count();
    if total_positives == 0 {
        return Err(Error::InvalidArgument(
            "precision-recall needs at least one positive label".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).expect("finite scores"));

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut idx = 0;
    while idx < order.len() {
        // consume the whole group of equal scores: thresholds are strict,
        // so a tie group enters the positive set together
        let score = scores[order[idx]];
        while idx < order.len() && scores[order[idx]] == score {
            predicted += 1;
            if labels[order[idx]] {
                tp += 1;
            }
            idx += 1;
        }
        let precision = tp as f64 / predicted as f64;
        let recall = tp as f64 / total_positives as f64;
        points.push((recall, precision));
    }
    Ok(PRCurve { points })
}

/// Area under the precision-recall curve, in [0, 1].
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(pr_curve(scores, labels)?.area())
}

/// Median per-point inference timing for one model on one cloud.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub variant: &'static str,
    pub stage: &'static str,
    pub points: usize,
    pub repetitions: usize,
    pub median_wall: Duration,
    pub seconds_per_point: f64,
    /// Timing context; inference is pinned to one thread for stability.
    pub execution: &'static str,
}

impl BenchReport {
    /// Key = value lines for the report file.
    pub fn to_key_values(&self) -> String {
        format!(
            "variant = {}\nstage = {}\npoints = {}\nrepetitions = {}\nmedian_wall_seconds = {}\nseconds_per_point = {}\nexecution = {}\n",
            self.variant,
            self.stage,
            self.points,
            self.repetitions,
            self.median_wall.as_secs_f64(),
            self.seconds_per_point,
            self.execution,
        )
    }
}

/// Times patch extraction plus forward inference for every point,
/// sequentially, taking the median over `repetitions` full passes after a
/// warm-up pass.
pub fn bench_per_point(
    cloud: &PointCloud,
    cfg: &ModelConfig,
    params: &ModelParams,
    kind: ModelKind,
    pp: &PatchParams,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs at least 3 repetitions, got {repetitions}"
        )));
    }
    if cloud.len() < cfg.k + 1 {
        return Err(Error::InvalidArgument(format!(
            "benchmark cloud needs more than k = {} points",
            cfg.k
        )));
    }
    let index = SpatialIndex::build(cloud)?;
    let diagonal = bounding_box(cloud)?.diagonal();
    let run_once = || -> Result<Duration> {
        let start = Instant::now();
        for i in 0..cloud.len() {
            let patch = patch_for_point(cloud, &index, diagonal, pp, cfg.k, i)?;
            match kind {
                ModelKind::Detector => {
                    detector_probability(&patch, cfg, params)?;
                }
                ModelKind::Denoiser => {
                    denoiser_displacement(&patch, cfg, params)?;
                }
            }
        }
        Ok(start.elapsed())
    };
    run_once()?; // warm-up
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        times.push(run_once()?);
    }
    times.sort();
    let median_wall = times[times.len() / 2];
    Ok(BenchReport {
        variant: cfg.variant.id(),
        stage: kind.tag(),
        points: cloud.len(),
        repetitions,
        median_wall,
        seconds_per_point: median_wall.as_secs_f64() / cloud.len() as f64,
        execution: "single-thread",
    })
}
