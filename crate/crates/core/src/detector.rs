//! Outlier classification, thresholding, removal, and detector training.

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::geometry::{bounding_box, extract_patch_or_knn, Patch, PointCloud, SpatialIndex};
use crate::network::{
    derive_seed, detector_forward, detector_probability, BoundParams, InitScheme, ModelConfig,
    ModelParams,
};
use crate::train::{run_sgd, TrainHyper, TrainReport};
use rayon::prelude::*;

/// How patches are cut out of a cloud. The radius is a fraction of the
/// bounding-box diagonal of the cloud the patches come from; points whose
/// ball holds fewer than k+1 points fall back to the k nearest cloud-wide,
/// so isolated points always get an evaluable patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchParams {
    pub radius_fraction: f64,
    pub size: usize,
    pub seed: u64,
}

impl Default for PatchParams {
    fn default() -> Self {
        PatchParams {
            radius_fraction: 0.05,
            size: 500,
            seed: 0,
        }
    }
}

impl PatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_fraction > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "patch radius fraction must be positive, got {}",
                self.radius_fraction
            )));
        }
        if self.size < 1 {
            return Err(Error::InvalidArgument("patch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cuts the patch for one point, with the kNN fallback for sparse balls.
pub fn patch_for_point(
    cloud: &PointCloud,
    index: &SpatialIndex,
    diagonal: f64,
    pp: &PatchParams,
    k: usize,
    point_index: usize,
) -> Result<Patch> {
    let radius = if diagonal > 0.0 {
        pp.radius_fraction * diagonal
    } else {
        pp.radius_fraction
    };
    extract_patch_or_knn(
        cloud,
        index,
        point_index,
        radius,
        pp.size,
        k + 1,
        derive_seed(pp.seed, point_index as u64),
    )
}

/// Per-point probabilities and the thresholded outlier flags.
#[derive(Debug, Clone)]
pub struct OutlierDecision {
    pub probabilities: Vec<f64>,
    pub is_outlier: Vec<bool>,
    pub threshold: f64,
}

impl OutlierDecision {
    pub fn outlier_count(&self) -> usize {
        self.is_outlier.iter().filter(|&&o| o).count()
    }
}

/// Runs the detector on a patch centered at every point and flags the
/// points whose probability strictly exceeds `threshold`.
pub fn classify_outliers(
    cloud: &PointCloud,
    cfg: &ModelConfig,
    params: &ModelParams,
    pp: &PatchParams,
    threshold: f64,
) -> Result<OutlierDecision> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    pp.validate()?;
    if cloud.len() < cfg.k + 1 {
        return Err(Error::InvalidArgument(format!(
            "classification needs at least k+1 = {} points, got {}",
            cfg.k + 1,
            cloud.len()
        )));
    }
    let index = SpatialIndex::build(cloud)?;
    let diagonal = bounding_box(cloud)?.diagonal();
    let probabilities: Vec<f64> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let patch = patch_for_point(cloud, &index, diagonal, pp, cfg.k, i)?;
            detector_probability(&patch, cfg, params)
        })
        .collect::<Result<_>>()?;
    let is_outlier = probabilities.iter().map(|&p| p > threshold).collect();
    Ok(OutlierDecision {
        probabilities,
        is_outlier,
        threshold,
    })
}

/// The subsequence of points not flagged as outliers, order preserved;
/// labels (when present) are filtered identically.
pub fn remove_outliers(cloud: &PointCloud, decision: &OutlierDecision) -> Result<PointCloud> {
    if decision.is_outlier.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "decision vs cloud",
            expected: cloud.len(),
            got: decision.is_outlier.len(),
        });
    }
    let points: Vec<_> = cloud
        .points()
        .iter()
        .zip(&decision.is_outlier)
        .filter(|(_, &o)| !o)
        .map(|(p, _)| *p)
        .collect();
    match cloud.labels() {
        Some(labels) => {
            let kept: Vec<bool> = labels
                .iter()
                .zip(&decision.is_outlier)
                .filter(|(_, &o)| !o)
                .map(|(l, _)| *l)
                .collect();
            PointCloud::with_labels(points, kept)
        }
        None => Ok(PointCloud::from_points(points)),
    }
}

/// Manhattan distance between the estimated probability and the binary
/// label: |õ − o|.
pub fn detector_loss(probability: f64, label: bool) -> f64 {
    (probability - label as u8 as f64).abs()
}

/// One training example: a patch and its center's ground-truth label.
#[derive(Debug, Clone)]
pub struct DetectorSample {
    pub patch: Patch,
    pub label: bool,
}

/// Cuts per-point training patches from labeled clouds. When
/// `max_per_cloud` is set, that many points are drawn per cloud uniformly
/// without replacement.
pub fn build_detector_dataset(
    clouds: &[PointCloud],
    pp: &PatchParams,
    k: usize,
    max_per_cloud: Option<usize>,
) -> Result<Vec<DetectorSample>> {
    pp.validate()?;
    let mut samples = Vec::new();
    for (ci, cloud) in clouds.iter().enumerate() {
        let labels = cloud.labels().ok_or_else(|| {
            Error::InvalidArgument(format!("training cloud {ci} has no outlier labels"))
        })?;
        if cloud.len() < k + 1 {
            return Err(Error::InvalidArgument(format!(
                "training cloud {ci} smaller than k+1 = {}",
                k + 1
            )));
        }
        let index = SpatialIndex::build(cloud)?;
        let diagonal = bounding_box(cloud)?.diagonal();
        let chosen: Vec<usize> = match max_per_cloud {
            Some(m) if cloud.len() > m => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                    pp.seed,
                    0xC10D + ci as u64,
                ));
                let mut picks = rand::seq::index::sample(&mut rng, cloud.len(), m).into_vec();
                picks.sort_unstable();
                picks
            }
            _ => (0..cloud.len()).collect(),
        };
        let cloud_samples: Vec<DetectorSample> = chosen
            .par_iter()
            .map(|&i| {
                let patch = patch_for_point(cloud, &index, diagonal, pp, k, i)?;
                Ok(DetectorSample {
                    patch,
                    label: labels[i],
                })
            })
            .collect::<Result<_>>()?;
        samples.extend(cloud_samples);
    }
    Ok(samples)
}

/// Minimizes the mean |õ − o| by plain SGD. Deterministic per seed; a
/// single-class dataset is a warning, not an error.
pub fn train_detector(
    samples: &[DetectorSample],
    cfg: &ModelConfig,
    hyper: &TrainHyper,
    init: InitScheme,
) -> Result<(ModelParams, TrainReport)> {
    let mut report = TrainReport::default();
    let positives = samples.iter().filter(|s| s.label).count();
    if positives == 0 || positives == samples.len() {
        report.warnings.push(format!(
            "dataset has a single class ({positives} of {} positive); training proceeds",
            samples.len()
        ));
    }
    let mut params = ModelParams::init_with(cfg, init, hyper.seed)?;
    if init.calibrate_scales {
        let refs: Vec<&Patch> = samples.iter().take(8).map(|s| &s.patch).collect();
        crate::network::calibrate_activation_scales(&mut params, cfg, &refs)?;
    }
    let losses = run_sgd(&mut params, samples, hyper, |sample, params| {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, params);
        let prob = detector_forward(&mut tape, &sample.patch, cfg, &bound)?;
        let loss = tape.abs_err(prob, sample.label as u8 as f64)?;
        tape.backward(loss)?;
        Ok((tape.value(loss).item(), bound.grads(&tape)))
    })?;
    report.epoch_losses = losses;
    Ok((params, report))
}
