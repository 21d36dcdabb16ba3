//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use eeloc::bench::{sweep_threshold, SweepSpec, ThetaGrid};
use eeloc::calibrate::{evaluate_policy, EvalSet};
use eeloc::exitnet::{
    build_ujiloc_variant, train_all_exits, train_baseline, ExitBranchSpec, ExitPolicy, ModelSpec,
    MultiExitModel, UjiConfig, UncertaintyMethod,
};
use eeloc::fingerprint::LabeledDataset;
use eeloc::tensornn::HyperParams;
use eeloc::tensornn::{backward, GradientStore, LayerSpec, LayerStack, Shape, WeightStore};

/// Three conv stages of the given widths (2×2 kernels, ReLU), a dense exit
/// on stage 1 and a conv+dense exit on stage 2.
pub fn two_exit_spec(
    side: usize,
    classes: usize,
    widths: [usize; 3],
    exit2_filters: usize,
) -> ModelSpec {
    let input = Shape::new(side, side, 1);
    let s1 = LayerStack::new(input)
        .conv2d("c1", 2, 1, widths[0])
        .unwrap()
        .relu()
        .unwrap();
    let s2 = LayerStack::new(s1.output_shape())
        .conv2d("c2", 2, 1, widths[1])
        .unwrap()
        .relu()
        .unwrap();
    let s3 = LayerStack::new(s2.output_shape())
        .conv2d("c3", 2, 1, widths[2])
        .unwrap()
        .relu()
        .unwrap();
    let e1 = LayerStack::new(s1.output_shape())
        .flatten_as("e1/flatten")
        .unwrap()
        .dense("e1_out", classes)
        .unwrap()
        .softmax()
        .unwrap();
    let e2 = LayerStack::new(s2.output_shape())
        .conv2d("e2_conv", 2, 1, exit2_filters)
        .unwrap()
        .relu()
        .unwrap()
        .flatten()
        .unwrap()
        .dense("e2_out", classes)
        .unwrap()
        .softmax()
        .unwrap();
    let head = LayerStack::new(s3.output_shape())
        .flatten_as("head/flatten")
        .unwrap()
        .dense("out", classes)
        .unwrap()
        .softmax()
        .unwrap();
    let spec = ModelSpec {
        input_shape: input,
        classes,
        stages: vec![s1, s2, s3],
        exits: vec![
            ExitBranchSpec {
                name: "e1".into(),
                attach_stage: 0,
                layers: e1,
            },
            ExitBranchSpec {
                name: "e2".into(),
                attach_stage: 1,
                layers: e2,
            },
        ],
        head,
    };
    spec.validate().unwrap();
    spec
}

/// Outcome of a finite-difference gradient check.
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|, floor)` over the checked values.
    pub worst: f64,
    pub checked: usize,
    /// Values whose ±step perturbation crosses a ReLU or max-pool kink
    /// (one-sided slopes disagree); the central difference is meaningless there.
    pub skipped: usize,
}

/// Compares analytic gradients of every trainable value with central
/// differences of the loss.
pub fn check_gradients(
    layers: &[&LayerSpec],
    weights: &WeightStore<f64>,
    input: &eeloc::tensornn::Tensor3<f64>,
    label: usize,
    step: f64,
    floor: f64,
) -> GradCheck {
    let loss = |w: &WeightStore<f64>| backward(layers, w, input, label).unwrap().0;
    let (l0, grads): (f64, GradientStore<f64>) = backward(layers, weights, input, label).unwrap();
    let mut out = GradCheck {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut w = weights.clone();
    for (key, g) in grads.iter() {
        for i in 0..g.data.len() {
            let orig = w.get(key).unwrap().data[i];
            w.get_mut(key).unwrap().data[i] = orig + step;
            let lp = loss(&w);
            w.get_mut(key).unwrap().data[i] = orig - step;
            let lm = loss(&w);
            w.get_mut(key).unwrap().data[i] = orig;
            let (fwd, bwd) = ((lp - l0) / step, (l0 - lm) / step);
            if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(1e-3) {
                out.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * step);
            let analytic = g.data[i];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            out.worst = out.worst.max(err);
            out.checked += 1;
        }
    }
    out
}

pub struct UjiOutcome {
    pub points: usize,
    pub baseline_accuracy: f64,
    pub accuracy: f64,
    pub mac_drop: f64,
}

/// Trains the conv/pool variant with one exit on `train`, sweeps entropy
/// thresholds 0.01..=0.50 step 0.02 on `test` and compares θ=0.03 with the
/// exit-free baseline.
pub fn uji_pipeline(train: &LabeledDataset, test: &LabeledDataset) -> Result<UjiOutcome, String> {
    let e = |e: eeloc::Error| e.to_string();
    let cfg = UjiConfig {
        input_side: train.image_side(),
        classes: train.num_classes,
        ..Default::default()
    };
    let mut model = MultiExitModel::new(build_ujiloc_variant(&cfg).map_err(e)?, 4).map_err(e)?;
    let tr = EvalSet::from_dataset(train).map_err(e)?;
    let te = EvalSet::from_dataset(test).map_err(e)?;
    let hp = HyperParams {
        learning_rate: 0.05,
        epochs: 20,
        batch_size: 16,
        seed: 4,
    };
    train_baseline(&mut model, &tr.inputs, &tr.labels, &hp).map_err(e)?;
    train_all_exits(&mut model, &tr.inputs, &tr.labels, &hp).map_err(e)?;
    let spec = SweepSpec {
        method: UncertaintyMethod::Entropy,
        thetas: ThetaGrid::Range {
            start: 0.01,
            stop: 0.50,
            step: 0.02,
        },
        enabled: vec![true],
    };
    let points = sweep_threshold(&model, &spec, &te).map_err(e)?;
    let base = evaluate_policy(&model, &ExitPolicy::all_off(1), &te).map_err(e)?;
    let at = evaluate_policy(&model, &spec.policy(0.03), &te).map_err(e)?;
    Ok(UjiOutcome {
        points: points.len(),
        baseline_accuracy: base.accuracy,
        accuracy: at.accuracy,
        mac_drop: 1.0 - at.mean_macs / base.mean_macs,
    })
}

/// Adds uniform noise in ±`amount` to every block so that no bias is
/// exactly zero (zero biases on zero inputs put ReLUs on their kink).
pub fn jitter<R: rand::Rng>(weights: &mut WeightStore<f64>, amount: f64, rng: &mut R) {
    let keys: Vec<String> = weights.keys().cloned().collect();
    for k in keys {
        for v in weights.get_mut(&k).unwrap().data.iter_mut() {
            *v += rng.random_range(-amount..amount);
        }
    }
}
