//! Seeded weight initializers.

use super::Data;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Zero-mean normal with variance 2/fan_in. For a 2-d (in, out) weight the
/// fan-in is the row count; for a bias or 1-d tensor it is the length.
pub fn init_he(shape: Vec<usize>, rng_seed: u64) -> Result<Data> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "invalid tensor shape {shape:?}"
        )));
    }
    let fan_in = shape[0];
    let std = (2.0 / fan_in as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let numel: usize = shape.iter().product();
    let vals = (0..numel)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        })
        .collect();
    Data::new(shape, vals)
}

/// I.i.d. uniform in the open interval (lo, hi).
pub fn init_uniform(shape: Vec<usize>, lo: f64, hi: f64, rng_seed: u64) -> Result<Data> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "invalid tensor shape {shape:?}"
        )));
    }
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "uniform bounds must satisfy lo < hi, got ({lo}, {hi})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let numel: usize = shape.iter().product();
    let vals = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Data::new(shape, vals)
}
