//! Baseline training followed by frozen-backbone training of each exit.

use rayon::prelude::*;

use super::MultiExitModel;
use crate::error::{invalid, Error, Result};
use crate::tensornn::{fit, predict, EpochStats, HyperParams, LayerSpec, Tensor3};

fn check_data(model: &MultiExitModel, inputs: &[Tensor3<f32>], labels: &[usize]) -> Result<()> {
    if inputs.len() != labels.len() {
        return invalid(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= model.classes()) {
        return invalid(format!("label {bad} >= class count {}", model.classes()));
    }
    if let Some(x) = inputs.iter().find(|x| x.shape() != model.spec.input_shape) {
        return invalid(format!(
            "input {} does not match model input {}",
            x.shape(),
            model.spec.input_shape
        ));
    }
    Ok(())
}

/// Trains the backbone and final head; exit branches are not touched.
pub fn train_baseline(
    model: &mut MultiExitModel,
    inputs: &[Tensor3<f32>],
    labels: &[usize],
    hp: &HyperParams,
) -> Result<Vec<EpochStats>> {
    check_data(model, inputs, labels)?;
    let layers = model.spec.baseline_path();
    let history = fit(&layers, &mut model.weights, inputs, labels, hp)?;
    model.status.baseline = true;
    model.meta.baseline_hyperparams = Some(hp.clone());
    Ok(history)
}

/// Backbone activations at the attachment point of `exit`.
pub fn exit_features(
    model: &MultiExitModel,
    exit: usize,
    inputs: &[Tensor3<f32>],
) -> Result<Vec<Tensor3<f32>>> {
    let attach = model.spec.exit(exit)?.attach_stage;
    let prefix: Vec<&LayerSpec> = model.spec.stages[..=attach]
        .iter()
        .flat_map(|s| s.layers())
        .collect();
    inputs
        .par_iter()
        .map(|x| predict(&prefix, &model.weights, x))
        .collect()
}

/// Trains one exit branch against the class labels with every other block
/// frozen. Requires a trained baseline.
pub fn train_exit_branch(
    model: &mut MultiExitModel,
    exit: usize,
    inputs: &[Tensor3<f32>],
    labels: &[usize],
    hp: &HyperParams,
) -> Result<Vec<EpochStats>> {
    if !model.status.baseline {
        return Err(Error::Prerequisite(
            "exit branches need a trained backbone".into(),
        ));
    }
    check_data(model, inputs, labels)?;
    let features = exit_features(model, exit, inputs)?;
    let branch_keys = model.spec.exit_block_keys(exit)?;

    let saved = model.weights.frozen_keys().clone();
    let others: Vec<String> = model
        .weights
        .keys()
        .filter(|k| !branch_keys.contains(k))
        .cloned()
        .collect();
    for k in &others {
        model.weights.freeze(k);
    }
    let layers: Vec<&LayerSpec> = model.spec.exits[exit].layers.layers().iter().collect();
    let result = fit(&layers, &mut model.weights, &features, labels, hp);
    model.weights.set_frozen(saved);

    let history = result?;
    model.status.exits[exit] = true;
    model.meta.exit_hyperparams = Some(hp.clone());
    Ok(history)
}

/// Trains every exit in depth order.
pub fn train_all_exits(
    model: &mut MultiExitModel,
    inputs: &[Tensor3<f32>],
    labels: &[usize],
    hp: &HyperParams,
) -> Result<Vec<Vec<EpochStats>>> {
    (0..model.num_exits())
        .map(|e| train_exit_branch(model, e, inputs, labels, hp))
        .collect()
}
