//! Shared SGD machinery for both training loops.
//!
//! Batches are evaluated in parallel (forward + backward per sample on a
//! private tape), but gradients are reduced sequentially in batch order and
//! parameters step from a single writer, so training is bitwise
//! deterministic for a fixed seed regardless of thread count.

use crate::autodiff::Data;
use crate::error::{Error, Result};
use crate::network::{derive_seed, ModelParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Hyperparameters of one SGD run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Epoch losses plus any non-fatal conditions hit during training.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// (epoch, mean loss) per epoch, 1-based.
    pub epoch_losses: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    /// The loss log as comma-separated `epoch,mean_loss` lines.
    pub fn loss_log(&self) -> String {
        let mut out = String::new();
        for (epoch, loss) in &self.epoch_losses {
            out.push_str(&format!("{epoch},{loss}\n"));
        }
        out
    }
}

/// Runs mini-batch SGD over `samples`. `per_sample` evaluates one sample
/// against the current parameters and returns its loss and the parameter
/// gradients in entry order; the update uses the batch-mean gradient.
pub fn run_sgd<S, F>(
    params: &mut ModelParams,
    samples: &[S],
    hyper: &TrainHyper,
    per_sample: F,
) -> Result<Vec<(usize, f64)>>
where
    S: Sync,
    F: Fn(&S, &ModelParams) -> Result<(f64, Vec<Data>)> + Sync,
{
    hyper.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs at least one sample".into(),
        ));
    }
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=hyper.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let results: Vec<Result<(f64, Vec<Data>)>> = batch
                .par_iter()
                .map(|&i| per_sample(&samples[i], params))
                .collect();
            let mut batch_grads: Option<Vec<Data>> = None;
            for r in results {
                let (loss, grads) = r?;
                loss_sum += loss;
                match &mut batch_grads {
                    None => batch_grads = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (av, gv) in a.vals_mut().iter_mut().zip(g.vals()) {
                                *av += gv;
                            }
                        }
                    }
                }
            }
            if let Some(mut grads) = batch_grads {
                let inv = 1.0 / batch.len() as f64;
                for g in &mut grads {
                    for v in g.vals_mut() {
                        *v *= inv;
                    }
                }
                params.sgd_step(&grads, hyper.lr)?;
            }
        }
        epoch_losses.push((epoch, loss_sum / samples.len() as f64));
    }
    Ok(epoch_losses)
}
