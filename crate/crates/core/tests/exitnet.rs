mod common;

use eeloc::calibrate::{evaluate_policy, EvalSet};
use eeloc::exitnet::{
    infer_full, infer_with_exits, load_model, reference_spec, save_model, train_all_exits,
    train_baseline, train_exit_branch, ExitBranchSpec, ExitPolicy, ExitRule, ExitTaken, ModelSpec,
    MultiExitModel, UncertaintyMethod,
};
use eeloc::fingerprint::{synth_generate, SynthParams};
use eeloc::tensornn::{bias_key, weight_key, Block, HyperParams, LayerStack, Shape, Tensor3};
use eeloc::Error;

fn easy_set(classes: usize, per_class: usize, seed: u64) -> EvalSet {
    let p = SynthParams {
        classes,
        waps: 64,
        samples_per_class: per_class,
        easy_fraction: 1.0,
        noise_db: 3.0,
        seed,
    };
    EvalSet::from_dataset(&synth_generate(&p).unwrap()).unwrap()
}

fn small_model(classes: usize, seed: u64) -> MultiExitModel {
    MultiExitModel::new(common::two_exit_spec(8, classes, [8, 16, 16], 4), seed).unwrap()
}

/// 2×2 input → 2×2 conv (1 filter) → exit (dense 2) | pointwise → head (dense 2).
fn hand_set_model() -> MultiExitModel {
    let input = Shape::new(2, 2, 1);
    let s1 = LayerStack::new(input)
        .conv2d("c", 2, 1, 1)
        .unwrap()
        .relu()
        .unwrap();
    let s2 = LayerStack::new(s1.output_shape())
        .pointwise("p", 1)
        .unwrap()
        .relu()
        .unwrap();
    let branch = |name: &str, at: Shape| {
        LayerStack::new(at)
            .flatten_as(&format!("{name}/flatten"))
            .unwrap()
            .dense(name, 2)
            .unwrap()
            .softmax()
            .unwrap()
    };
    let spec = ModelSpec {
        input_shape: input,
        classes: 2,
        exits: vec![ExitBranchSpec {
            name: "x".into(),
            attach_stage: 0,
            layers: branch("x_out", s1.output_shape()),
        }],
        head: branch("out", s2.output_shape()),
        stages: vec![s1, s2],
    };
    let mut m = MultiExitModel::new(spec, 0).unwrap();
    let set =
        |m: &mut MultiExitModel, layer: &str, w: Vec<f32>, wshape: Vec<usize>, b: Vec<f32>| {
            let bshape = vec![b.len()];
            m.weights
                .insert(weight_key(layer), Block::new(wshape, w).unwrap());
            m.weights
                .insert(bias_key(layer), Block::new(bshape, b).unwrap());
        };
    set(&mut m, "c", vec![0.25; 4], vec![2, 2, 1, 1], vec![0.0]);
    set(
        &mut m,
        "x_out",
        vec![9f32.ln(), 0.0],
        vec![1, 2],
        vec![0.0, 0.0],
    );
    set(&mut m, "p", vec![1.0], vec![1, 1, 1, 1], vec![0.0]);
    set(&mut m, "out", vec![0.0, 1.0], vec![1, 2], vec![0.0, 0.0]);
    m
}

#[test]
fn hand_computed_exit() {
    let m = hand_set_model();
    let x = Tensor3::new(Shape::new(2, 2, 1), vec![1.0; 4]).unwrap();
    let policy = ExitPolicy {
        exits: vec![Some(ExitRule {
            method: UncertaintyMethod::Margin,
            threshold: 0.5,
        })],
    };
    let inf = infer_full(&m, &policy, &x).unwrap();
    assert_eq!(inf.trace.exit_taken, ExitTaken::Exit(0));
    assert_eq!(inf.trace.predicted, 0);
    assert!((inf.output.probs[0] - 0.9).abs() < 1e-6);
    assert!((inf.trace.scores[0].1 - 0.8).abs() < 1e-6);
    // conv: 1 output × 4 taps; exit dense: 1 × 2.
    assert_eq!(inf.trace.macs, 6);
    assert_eq!(
        inf.trace.macs,
        m.spec.stage_macs()[0] + m.spec.exit_macs()[0]
    );

    let strict = ExitPolicy {
        exits: vec![Some(ExitRule {
            method: UncertaintyMethod::Margin,
            threshold: 0.9,
        })],
    };
    let inf = infer_full(&m, &strict, &x).unwrap();
    assert_eq!(inf.trace.exit_taken, ExitTaken::Final);
    assert_eq!(inf.trace.predicted, 1);
    assert_eq!(inf.trace.macs, 4 + 2 + 1 + 2);
}

#[test]
fn trace_macs_match_executed_layers() {
    let m = small_model(4, 1);
    let x = Tensor3::new(m.spec.input_shape, vec![0.5; 64]).unwrap();
    let spec = &m.spec;
    let never = ExitPolicy::uniform(2, UncertaintyMethod::Margin, 1.0);
    let (_, t) = infer_with_exits(&m, &never, &x).unwrap();
    assert_eq!(t.exit_taken, ExitTaken::Final);
    assert_eq!(
        t.macs,
        spec.baseline_macs() + spec.exit_macs().iter().sum::<u64>()
    );
    assert_eq!(t.scores.len(), 2);

    let always = ExitPolicy::uniform(2, UncertaintyMethod::Margin, 0.0);
    let (_, t) = infer_with_exits(&m, &always, &x).unwrap();
    assert_eq!(t.exit_taken, ExitTaken::Exit(0));

    let second_only = ExitPolicy {
        exits: vec![None, always.exits[1]],
    };
    let (_, t) = infer_with_exits(&m, &second_only, &x).unwrap();
    assert_eq!(t.exit_taken, ExitTaken::Exit(1));
    assert_eq!(
        t.macs,
        spec.stage_macs()[0] + spec.stage_macs()[1] + spec.exit_macs()[1]
    );
}

#[test]
fn shape_mismatch_and_bad_policy_rejected() {
    let m = small_model(4, 1);
    let x = Tensor3::new(Shape::new(7, 7, 1), vec![0.0; 49]).unwrap();
    assert!(infer_with_exits(&m, &ExitPolicy::all_off(2), &x).is_err());
    let x = Tensor3::new(m.spec.input_shape, vec![0.0; 64]).unwrap();
    assert!(infer_with_exits(&m, &ExitPolicy::all_off(1), &x).is_err());
    let bad = ExitPolicy::uniform(2, UncertaintyMethod::Ratio, 0.5);
    assert!(infer_with_exits(&m, &bad, &x).is_err());
}

#[test]
fn baseline_training_converges_and_is_deterministic() {
    let set = easy_set(8, 30, 3);
    let hp = HyperParams {
        learning_rate: 0.1,
        epochs: 50,
        batch_size: 16,
        seed: 5,
    };
    let mut a = small_model(8, 2);
    let history = train_baseline(&mut a, &set.inputs, &set.labels, &hp).unwrap();
    assert!(history.last().unwrap().mean_loss < history[0].mean_loss);
    let acc = evaluate_policy(&a, &ExitPolicy::all_off(2), &set)
        .unwrap()
        .accuracy;
    assert!(acc >= 0.95, "train accuracy {acc}");

    let mut b = small_model(8, 2);
    train_baseline(&mut b, &set.inputs, &set.labels, &hp).unwrap();
    assert_eq!(a.weights, b.weights);
}

#[test]
fn zero_learning_rate_leaves_weights() {
    let set = easy_set(4, 5, 1);
    let mut m = small_model(4, 3);
    let before = m.weights.clone();
    let hp = HyperParams {
        learning_rate: 0.0,
        epochs: 2,
        batch_size: 4,
        seed: 0,
    };
    train_baseline(&mut m, &set.inputs, &set.labels, &hp).unwrap();
    assert_eq!(m.weights, before);
    assert!(m.status.baseline);
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let set = easy_set(4, 5, 1);
    let mut m = small_model(4, 3);
    let hp = HyperParams {
        learning_rate: 1e30,
        epochs: 5,
        batch_size: 4,
        seed: 0,
    };
    let err = train_baseline(&mut m, &set.inputs, &set.labels, &hp).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn exit_training_requires_baseline_and_freezes_backbone() {
    let set = easy_set(6, 20, 4);
    let hp = HyperParams {
        learning_rate: 0.1,
        epochs: 5,
        batch_size: 16,
        seed: 1,
    };
    let mut m = small_model(6, 7);
    let err = train_exit_branch(&mut m, 0, &set.inputs, &set.labels, &hp).unwrap_err();
    assert!(matches!(err, Error::Prerequisite(_)));

    train_baseline(&mut m, &set.inputs, &set.labels, &hp).unwrap();
    let backbone: Vec<String> = m.spec.baseline_block_keys();
    let branch: Vec<String> = m.spec.exit_block_keys(0).unwrap();
    let sum =
        |m: &MultiExitModel, keys: &[String]| m.weights.checksum(keys.iter().map(String::as_str));
    let (bb_before, br_before) = (sum(&m, &backbone), sum(&m, &branch));
    let other_exit = sum(&m, &m.spec.exit_block_keys(1).unwrap());

    train_exit_branch(&mut m, 0, &set.inputs, &set.labels, &hp).unwrap();
    assert_eq!(sum(&m, &backbone), bb_before);
    assert_eq!(sum(&m, &m.spec.exit_block_keys(1).unwrap()), other_exit);
    assert_ne!(sum(&m, &branch), br_before);
    assert!(m.weights.frozen_keys().is_empty());
    assert!(m.status.exits[0] && !m.status.exits[1]);

    train_all_exits(&mut m, &set.inputs, &set.labels, &hp).unwrap();
    assert_eq!(sum(&m, &backbone), bb_before);
    let always = ExitPolicy::uniform(2, UncertaintyMethod::Margin, 0.0);
    let exit_acc = evaluate_policy(&m, &always, &set).unwrap().accuracy;
    assert!(exit_acc > 1.0 / 6.0, "exit accuracy {exit_acc}");
}

#[test]
fn reference_exit_parameter_counts() {
    let spec = reference_spec(342).unwrap();
    assert_eq!(spec.exits.len(), 2);
    assert_eq!(spec.exit_params(0).unwrap(), 9_204_246);
    assert_eq!(spec.exit_params(1).unwrap(), 2_056 + 1_994_886);
    assert_eq!(spec.head.output_shape(), Shape::flat(342));
    for e in &spec.exits {
        assert_eq!(e.layers.output_shape(), Shape::flat(342));
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut m = small_model(4, 9);
    m.status.baseline = true;
    m.default_policy = ExitPolicy {
        exits: vec![
            Some(ExitRule {
                method: UncertaintyMethod::Ratio,
                threshold: f64::INFINITY,
            }),
            None,
        ],
    };
    m.meta.source_digest = Some("abc".into());
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, m);

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(
        &path,
        text.replace("\"format_version\": 1", "\"format_version\": 2"),
    )
    .unwrap();
    assert!(matches!(load_model(&path), Err(Error::Format(_))));
}
