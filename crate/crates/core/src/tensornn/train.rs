use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::backward_with_prediction;
use super::{GradientStore, LayerSpec, Scalar, Tensor3, WeightStore};
use crate::error::{invalid, shape_err, Error, Result};

/// Samples per sequential gradient chunk. Fixed so that the summation
/// order, and hence the trained weights, do not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the pre-update predictions seen during the epoch.
    pub train_accuracy: f64,
}

/// `w ← w − lr·g` for every gradient block whose weights are not frozen.
pub fn sgd_step<T: Scalar>(
    weights: &mut WeightStore<T>,
    grads: &GradientStore<T>,
    learning_rate: T,
) -> Result<()> {
    if learning_rate == T::zero() {
        return Ok(());
    }
    for (key, g) in grads.iter() {
        if weights.is_frozen(key) {
            continue;
        }
        let Some(w) = weights.get_mut(key) else {
            return Err(Error::Format(format!("gradient for unknown block '{key}'")));
        };
        if w.shape != g.shape {
            return shape_err(format!(
                "block '{key}': weights {:?} vs gradient {:?}",
                w.shape, g.shape
            ));
        }
        for (wv, &gv) in w.data.iter_mut().zip(&g.data) {
            *wv = *wv - learning_rate * gv;
        }
    }
    Ok(())
}

/// Mini-batch SGD on the cross-entropy loss of `layers`.
///
/// Each batch's per-sample gradients are computed in parallel and averaged.
/// Blocks frozen in `weights` are never touched.
pub fn fit(
    layers: &[&LayerSpec],
    weights: &mut WeightStore<f32>,
    inputs: &[Tensor3<f32>],
    labels: &[usize],
    hp: &HyperParams,
) -> Result<Vec<EpochStats>> {
    if inputs.len() != labels.len() {
        return invalid(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        ));
    }
    if inputs.is_empty() {
        return invalid("cannot train on an empty dataset");
    }
    if hp.batch_size == 0 {
        return invalid("batch size must be >= 1");
    }
    if !hp.learning_rate.is_finite() || hp.learning_rate < 0.0 {
        return invalid(format!(
            "learning rate {} is not a finite non-negative value",
            hp.learning_rate
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(hp.batch_size) {
            let shard_results: Vec<Result<(f64, usize, GradientStore<f32>)>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut acc = GradientStore::new();
                    let mut loss = 0.0;
                    let mut hits = 0;
                    for &i in chunk {
                        let (l, pred, g) =
                            backward_with_prediction(layers, weights, &inputs[i], labels[i])?;
                        loss += l;
                        hits += usize::from(pred == labels[i]);
                        acc.accumulate(&g)?;
                    }
                    Ok((loss, hits, acc))
                })
                .collect();
            let mut total = GradientStore::new();
            for r in shard_results {
                let (l, h, g) = r?;
                loss_sum += l;
                correct += h;
                total.accumulate(&g)?;
            }
            total.scale(1.0 / batch.len() as f32);
            if !total.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: f64::NAN,
                });
            }
            sgd_step(weights, &total, hp.learning_rate)?;
        }
        let mean_loss = loss_sum / inputs.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: mean_loss,
            });
        }
        history.push(EpochStats {
            epoch,
            mean_loss,
            train_accuracy: correct as f64 / inputs.len() as f64,
        });
    }
    Ok(history)
}
