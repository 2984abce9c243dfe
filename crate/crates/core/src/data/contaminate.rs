//! Contamination of clean clouds: Gaussian noise plus injected outliers,
//! with labels and clean-point correspondences recorded for training.

use super::shapes::Shape;
use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Point3, PointCloud, SpatialIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Everything needed to reproduce one contamination run. Length scales are
/// fractions of the clean cloud's bounding-box diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContaminationSpec {
    /// Gaussian noise std as a fraction of the diagonal.
    pub noise_level: f64,
    /// Fraction of points converted to outliers, in [0, 1].
    pub outlier_fraction: f64,
    /// Minimum outlier distance from the surface, as a fraction of the
    /// diagonal.
    pub outlier_min_distance: f64,
    pub seed: u64,
}

impl ContaminationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_level >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_level must be >= 0, got {}",
                self.noise_level
            )));
        }
        for (name, v) in [
            ("outlier_fraction", self.outlier_fraction),
            ("outlier_min_distance", self.outlier_min_distance),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The surface that outlier distances are measured against: the analytic
/// shape when available, otherwise the sampled clean cloud itself.
pub enum SurfaceRef<'a> {
    Analytic(&'a Shape),
    Sampled(&'a PointCloud),
}

/// A clean cloud with its contaminated counterpart. `contaminated` carries
/// outlier labels; `correspondence[i]` is the clean index that point i was
/// derived from (identity here, but recorded so downstream consumers never
/// assume it).
#[derive(Debug, Clone)]
pub struct PairedCloud {
    pub clean: PointCloud,
    pub contaminated: PointCloud,
    pub correspondence: Vec<usize>,
}

impl PairedCloud {
    pub fn labels(&self) -> &[bool] {
        self.contaminated.labels().expect("contaminated cloud is labeled")
    }

    pub fn outlier_count(&self) -> usize {
        self.labels().iter().filter(|&&o| o).count()
    }
}

const MAX_REJECTION_TRIES: usize = 10_000;

/// Displaces every point with isotropic Gaussian noise, then repositions an
/// `outlier_fraction` subset uniformly inside the 1.5×-expanded bounding
/// box, resampling until each lands farther than
/// `outlier_min_distance × diagonal` from the surface.
pub fn contaminate(
    clean: &PointCloud,
    surface: SurfaceRef<'_>,
    spec: &ContaminationSpec,
) -> Result<PairedCloud> {
    if clean.is_empty() {
        return Err(Error::EmptyCloud);
    }
    spec.validate()?;
    let bbox = bounding_box(clean)?;
    let diag = bbox.diagonal();
    let n = clean.len();
    let outlier_count = (spec.outlier_fraction * n as f64).round() as usize;
    if outlier_count > 0 && diag == 0.0 {
        return Err(Error::Contamination(
            "cannot inject outliers into a degenerate (zero-diagonal) cloud".into(),
        ));
    }

    let sampled_index = match &surface {
        SurfaceRef::Sampled(cloud) => Some(SpatialIndex::build(cloud)?),
        SurfaceRef::Analytic(_) => None,
    };
    let surface_distance = |p: Point3| -> f64 {
        match &surface {
            SurfaceRef::Analytic(shape) => shape.surface_distance(p),
            SurfaceRef::Sampled(_) => sampled_index
                .as_ref()
                .expect("index built for sampled surface")
                .k_nearest(p, 1)[0]
                .1,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma = spec.noise_level * diag;
    let mut points: Vec<Point3> = clean
        .points()
        .iter()
        .map(|&p| {
            let g = Point3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            p + g * sigma
        })
        .collect();

    let mut labels = vec![false; n];
    let mut chosen = rand::seq::index::sample(&mut rng, n, outlier_count).into_vec();
    chosen.sort_unstable();
    let expanded = bbox.expanded(1.5);
    let min_dist = spec.outlier_min_distance * diag;
    for &i in &chosen {
        let mut placed = false;
        for _ in 0..MAX_REJECTION_TRIES {
            let cand = Point3::new(
                rng.gen_range(expanded.min.x..=expanded.max.x),
                rng.gen_range(expanded.min.y..=expanded.max.y),
                rng.gen_range(expanded.min.z..=expanded.max.z),
            );
            if surface_distance(cand) > min_dist {
                points[i] = cand;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Contamination(format!(
                "no admissible outlier position found after {MAX_REJECTION_TRIES} tries \
                 (outlier_min_distance {} too large for the expanded box?)",
                spec.outlier_min_distance
            )));
        }
        labels[i] = true;
    }

    let contaminated = PointCloud::with_labels(points, labels)?;
    Ok(PairedCloud {
        clean: clean.clone(),
        contaminated,
        correspondence: (0..n).collect(),
    })
}
