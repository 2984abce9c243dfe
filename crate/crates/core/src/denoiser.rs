//! Displacement estimation and application, denoiser losses, and denoiser
//! training.

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Patch, Point3, PointCloud, SpatialIndex};
use crate::detector::{patch_for_point, PatchParams};
use crate::network::{
    denoiser_displacement, denoiser_forward, BoundParams, InitScheme, ModelConfig, ModelParams,
};
use crate::train::{run_sgd, TrainHyper, TrainReport};
use rayon::prelude::*;

/// Clean-cloud points forming the loss target for one predicted point.
/// Always non-empty: it contains at least the clean correspondent.
#[derive(Debug, Clone)]
pub struct GroundTruthNeighborhood {
    points: Vec<Point3>,
}

impl GroundTruthNeighborhood {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "ground-truth neighborhood must be non-empty".into(),
            ));
        }
        Ok(GroundTruthNeighborhood { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn as_arrays(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.to_array()).collect()
    }
}

/// Squared distance from the predicted point to the nearest neighborhood
/// point.
pub fn loss_s(predicted: Point3, neighborhood: &GroundTruthNeighborhood) -> f64 {
    neighborhood
        .points()
        .iter()
        .map(|q| predicted.dist_sq(*q))
        .fold(f64::INFINITY, f64::min)
}

/// Squared distance from the predicted point to the farthest neighborhood
/// point.
pub fn loss_r(predicted: Point3, neighborhood: &GroundTruthNeighborhood) -> f64 {
    neighborhood
        .points()
        .iter()
        .map(|q| predicted.dist_sq(*q))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// α·L_s + (1−α)·L_r.
pub fn loss_alpha(
    predicted: Point3,
    neighborhood: &GroundTruthNeighborhood,
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(alpha * loss_s(predicted, neighborhood) + (1.0 - alpha) * loss_r(predicted, neighborhood))
}

/// Applies the denoiser to every point: p̃_i = p_i + f(patch(p_i)). Point
/// count, ordering, and labels are preserved.
pub fn apply_denoise(
    cloud: &PointCloud,
    cfg: &ModelConfig,
    params: &ModelParams,
    pp: &PatchParams,
) -> Result<PointCloud> {
    pp.validate()?;
    if cloud.len() < cfg.k + 1 {
        return Err(Error::InvalidArgument(format!(
            "denoising needs at least k+1 = {} points, got {}",
            cfg.k + 1,
            cloud.len()
        )));
    }
    let index = SpatialIndex::build(cloud)?;
    let diagonal = bounding_box(cloud)?.diagonal();
    let moved: Vec<Point3> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let patch = patch_for_point(cloud, &index, diagonal, pp, cfg.k, i)?;
            let d = denoiser_displacement(&patch, cfg, params)?;
            Ok(cloud.point(i) + d)
        })
        .collect::<Result<_>>()?;
    match cloud.labels() {
        Some(labels) => PointCloud::with_labels(moved, labels.to_vec()),
        None => Ok(PointCloud::from_points(moved)),
    }
}

/// One training example: the noisy point's patch, its world position, and
/// the clean neighborhood it should land in.
#[derive(Debug, Clone)]
pub struct DenoiserSample {
    pub patch: Patch,
    pub noisy_point: Point3,
    pub neighborhood: GroundTruthNeighborhood,
}

/// Builds (patch, neighborhood) pairs from paired clouds. Outlier-labeled
/// points are skipped: the denoiser trains on noise only. The neighborhood
/// holds the clean points within the patch radius of the clean
/// correspondent, capped at `neighborhood_cap` nearest.
pub fn build_denoiser_dataset(
    paired: &[crate::data::PairedCloud],
    pp: &PatchParams,
    k: usize,
    neighborhood_cap: usize,
    max_per_cloud: Option<usize>,
) -> Result<Vec<DenoiserSample>> {
    pp.validate()?;
    if neighborhood_cap < 1 {
        return Err(Error::InvalidArgument(
            "neighborhood cap must be >= 1".into(),
        ));
    }
    let mut samples = Vec::new();
    for (ci, pair) in paired.iter().enumerate() {
        let noisy = &pair.contaminated;
        if pair.correspondence.len() != noisy.len() {
            return Err(Error::LengthMismatch {
                what: "correspondence vs contaminated cloud",
                expected: noisy.len(),
                got: pair.correspondence.len(),
            });
        }
        if noisy.len() < k + 1 {
            return Err(Error::InvalidArgument(format!(
                "paired cloud {ci} smaller than k+1 = {}",
                k + 1
            )));
        }
        let labels = pair.labels();
        let noisy_index = SpatialIndex::build(noisy)?;
        let clean_index = SpatialIndex::build(&pair.clean)?;
        let noisy_diag = bounding_box(noisy)?.diagonal();
        let clean_diag = bounding_box(&pair.clean)?.diagonal();
        let clean_radius = if clean_diag > 0.0 {
            pp.radius_fraction * clean_diag
        } else {
            pp.radius_fraction
        };

        let mut candidates: Vec<usize> = (0..noisy.len()).filter(|&i| !labels[i]).collect();
        if let Some(m) = max_per_cloud {
            if candidates.len() > m {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                    crate::network::derive_seed(pp.seed, 0xDE0 + ci as u64),
                );
                let mut picks =
                    rand::seq::index::sample(&mut rng, candidates.len(), m).into_vec();
                picks.sort_unstable();
                candidates = picks.into_iter().map(|p| candidates[p]).collect();
            }
        }

        let cloud_samples: Vec<DenoiserSample> = candidates
            .par_iter()
            .map(|&i| {
                let patch = patch_for_point(noisy, &noisy_index, noisy_diag, pp, k, i)?;
                let correspondent = pair.clean.point(pair.correspondence[i]);
                let mut in_ball = clean_index.radius(correspondent, clean_radius);
                in_ball.truncate(neighborhood_cap);
                let neighborhood = GroundTruthNeighborhood::new(
                    in_ball
                        .into_iter()
                        .map(|(j, _)| pair.clean.point(j))
                        .collect(),
                )?;
                Ok(DenoiserSample {
                    patch,
                    noisy_point: noisy.point(i),
                    neighborhood,
                })
            })
            .collect::<Result<_>>()?;
        samples.extend(cloud_samples);
    }
    Ok(samples)
}

/// Minimizes the mean L_α by plain SGD. The min/max selections inside the
/// loss are held constant per step; gradients flow through the selected
/// terms only. Deterministic per seed.
pub fn train_denoiser(
    samples: &[DenoiserSample],
    cfg: &ModelConfig,
    hyper: &TrainHyper,
    alpha: f64,
    init: InitScheme,
) -> Result<(ModelParams, TrainReport)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let mut report = TrainReport::default();
    let mut params = ModelParams::init_with(cfg, init, hyper.seed)?;
    if init.calibrate_scales {
        let refs: Vec<&Patch> = samples.iter().take(8).map(|s| &s.patch).collect();
        crate::network::calibrate_activation_scales(&mut params, cfg, &refs)?;
    }
    let losses = run_sgd(&mut params, samples, hyper, |sample, params| {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, params);
        let disp = denoiser_forward(&mut tape, &sample.patch, cfg, &bound)?;
        let neigh = sample.neighborhood.as_arrays();
        let loss = tape.loss_alpha(disp, sample.noisy_point.to_array(), &neigh, alpha)?;
        tape.backward(loss)?;
        Ok((tape.value(loss).item(), bound.grads(&tape)))
    })?;
    report.epoch_losses = losses;
    Ok((params, report))
}
