//! The conditional early-exit state machine.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::uncertainty::{passes, score_unchecked};
use super::{ExitPolicy, MultiExitModel};
use crate::error::{shape_err, Result};
use crate::tensornn::{predict, softmax, LayerSpec, Tensor3, WeightStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitTaken {
    Exit(usize),
    Final,
}

/// Logits and probabilities of the head that produced a prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub logits: Vec<f32>,
    pub probs: Vec<f32>,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub exit_taken: ExitTaken,
    /// `(exit index, score)` for every exit that was attempted.
    pub scores: Vec<(usize, f64)>,
    pub predicted: usize,
    pub macs: u64,
    pub wall_ns: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub output: HeadOutput,
    pub trace: InferenceTrace,
}

/// Runs a classifier stack whose last layer is softmax.
fn classify(
    layers: &[LayerSpec],
    weights: &WeightStore<f32>,
    x: &Tensor3<f32>,
) -> Result<HeadOutput> {
    let (_softmax, body) = layers.split_last().expect("validated classifier");
    let body: Vec<&LayerSpec> = body.iter().collect();
    let logits = predict(&body, weights, x)?.into_data();
    let probs = softmax(&logits)?;
    let class = crate::tensornn::graph_argmax(&probs);
    Ok(HeadOutput {
        logits,
        probs,
        class,
    })
}

fn check_input(model: &MultiExitModel, input: &Tensor3<f32>) -> Result<()> {
    if input.shape() != model.spec.input_shape {
        return shape_err(format!(
            "model expects {} images, got {}",
            model.spec.input_shape,
            input.shape()
        ));
    }
    Ok(())
}

/// Forward pass of the exit-free model (backbone + final head).
pub fn baseline_forward(model: &MultiExitModel, input: &Tensor3<f32>) -> Result<HeadOutput> {
    check_input(model, input)?;
    let spec = &model.spec;
    let backbone = spec.backbone_layers();
    let features = predict(&backbone, &model.weights, input)?;
    classify(spec.head.layers(), &model.weights, &features)
}

/// Stage by stage, attempting each enabled exit after its stage; the first
/// exit whose score passes its threshold answers. Disabled exits cost
/// nothing. Falls through to the final head.
pub fn infer_full(
    model: &MultiExitModel,
    policy: &ExitPolicy,
    input: &Tensor3<f32>,
) -> Result<Inference> {
    let start = Instant::now();
    check_input(model, input)?;
    policy.validate(model.num_exits())?;
    let spec = &model.spec;
    let stage_macs = spec.stage_macs();
    let exit_macs = spec.exit_macs();
    let mut macs = 0;
    let mut scores = Vec::new();
    let mut x = input.clone();
    for (si, stage) in spec.stages.iter().enumerate() {
        let layers: Vec<&LayerSpec> = stage.layers().iter().collect();
        x = predict(&layers, &model.weights, &x)?;
        macs += stage_macs[si];
        for (ei, exit) in spec
            .exits
            .iter()
            .enumerate()
            .filter(|(_, e)| e.attach_stage == si)
        {
            let Some(rule) = policy.exits[ei] else {
                continue;
            };
            let out = classify(exit.layers.layers(), &model.weights, &x)?;
            macs += exit_macs[ei];
            let probs: Vec<f64> = out.probs.iter().map(|&p| p as f64).collect();
            let score = score_unchecked(&probs, rule.method);
            scores.push((ei, score));
            if passes(score, rule.method, rule.threshold) {
                let predicted = out.class;
                return Ok(Inference {
                    output: out,
                    trace: InferenceTrace {
                        exit_taken: ExitTaken::Exit(ei),
                        scores,
                        predicted,
                        macs,
                        wall_ns: start.elapsed().as_nanos() as u64,
                    },
                });
            }
        }
    }
    let out = classify(spec.head.layers(), &model.weights, &x)?;
    macs += spec.head_macs();
    let predicted = out.class;
    Ok(Inference {
        output: out,
        trace: InferenceTrace {
            exit_taken: ExitTaken::Final,
            scores,
            predicted,
            macs,
            wall_ns: start.elapsed().as_nanos() as u64,
        },
    })
}

pub fn infer_with_exits(
    model: &MultiExitModel,
    policy: &ExitPolicy,
    input: &Tensor3<f32>,
) -> Result<(usize, InferenceTrace)> {
    let inf = infer_full(model, policy, input)?;
    Ok((inf.trace.predicted, inf.trace))
}

/// Traces for a batch of inputs, computed in parallel, in input order.
pub fn infer_batch(
    model: &MultiExitModel,
    policy: &ExitPolicy,
    inputs: &[Tensor3<f32>],
) -> Result<Vec<InferenceTrace>> {
    inputs
        .par_iter()
        .map(|x| infer_with_exits(model, policy, x).map(|(_, t)| t))
        .collect()
}
