use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exitnet::{infer_with_exits, ExitPolicy, ExitTaken, MultiExitModel};
use crate::fingerprint::{mean_localization_error, top1_accuracy, LabeledDataset};
use crate::tensornn::Tensor3;

/// Encoded inputs with their labels and, when known, class coordinates.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub inputs: Vec<Tensor3<f32>>,
    pub labels: Vec<usize>,
    pub coords: Option<Vec<Option<[f64; 2]>>>,
}

impl EvalSet {
    pub fn new(inputs: Vec<Tensor3<f32>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return invalid(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            ));
        }
        Ok(Self {
            inputs,
            labels,
            coords: None,
        })
    }

    pub fn from_dataset(ds: &LabeledDataset) -> Result<Self> {
        Ok(Self {
            inputs: ds.tensors()?,
            labels: ds.labels(),
            coords: ds.coords.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Coordinates are usable only if every label has them.
    fn usable_coords(&self) -> Option<&[Option<[f64; 2]>]> {
        let coords = self.coords.as_deref()?;
        self.labels
            .iter()
            .all(|&l| matches!(coords.get(l), Some(Some(_))))
            .then_some(coords)
    }
}

/// Metrics of one exit policy over an evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub accuracy: f64,
    /// Mean localization error in meters, when coordinates are known.
    pub error_m: Option<f64>,
    pub mean_macs: f64,
    pub mean_ns: f64,
    /// Fraction of samples answered by each exit.
    pub exit_rates: Vec<f64>,
    pub predictions: Vec<usize>,
}

/// Runs every sample through the early-exit state machine, one at a time.
pub fn evaluate_policy(
    model: &MultiExitModel,
    policy: &ExitPolicy,
    set: &EvalSet,
) -> Result<PolicyMetrics> {
    if set.is_empty() {
        return invalid("evaluation set is empty");
    }
    policy.validate(model.num_exits())?;
    let n = set.len();
    let mut predictions = Vec::with_capacity(n);
    let mut exits = vec![0usize; model.num_exits()];
    let (mut macs, mut ns) = (0u128, 0u128);
    for x in &set.inputs {
        let (pred, trace) = infer_with_exits(model, policy, x)?;
        predictions.push(pred);
        macs += trace.macs as u128;
        ns += trace.wall_ns as u128;
        if let ExitTaken::Exit(e) = trace.exit_taken {
            exits[e] += 1;
        }
    }
    let accuracy = top1_accuracy(&predictions, &set.labels)?;
    let error_m = match set.usable_coords() {
        Some(c) => Some(mean_localization_error(&predictions, &set.labels, c)?),
        None => None,
    };
    Ok(PolicyMetrics {
        accuracy,
        error_m,
        mean_macs: macs as f64 / n as f64,
        mean_ns: ns as f64 / n as f64,
        exit_rates: exits.iter().map(|&c| c as f64 / n as f64).collect(),
        predictions,
    })
}
