//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.
//!
//! The UJIndoorLoc criterion needs the public dataset on disk: set
//! `EELOC_UJI_TRAIN` to `trainingData.csv` (and optionally `EELOC_UJI_TEST`
//! to `validationData.csv`).

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eeloc::bench::{depth_study, sweep_threshold, SweepSpec, ThetaGrid};
use eeloc::calibrate::{
    calibrate, evaluate_policy, ConfigSpace, EvalSet, Objective, SelectionPolicy,
};
use eeloc::exitnet::{
    baseline_forward, infer_full, reference_spec, reference_topology, train_all_exits,
    train_baseline, ExitPolicy, ExitTaken, MultiExitModel, UncertaintyMethod,
};
use eeloc::fingerprint::{load_ujindoorloc, split, synth_generate, SynthParams};
use eeloc::tensornn::{HyperParams, LayerStack, Shape, Tensor3, WeightStore};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Trained desk-scale model shared by criteria 6 and 9.
struct DeskRun {
    model: MultiExitModel,
    test: EvalSet,
}

fn criterion_1() -> Outcome {
    let spec = reference_spec(342).map_err(e2s)?;
    let rows: Vec<(String, u64)> = spec
        .param_table()
        .into_iter()
        .map(|r| (r.name, r.count))
        .collect();
    let want: [u64; 7] = [160, 9_204_246, 8_256, 2_056, 1_994_886, 32_896, 31_913_046];
    let got: Vec<u64> = rows.iter().map(|r| r.1).collect();
    check(got == want, format!("parameter rows {rows:?}"))?;
    Ok(format!("rows {rows:?}"))
}

fn criterion_2() -> Outcome {
    let spec = reference_spec(342).map_err(e2s)?;
    let base = eeloc::calibrate::footprint_bytes(&spec, &[false, false]).map_err(e2s)? as f64;
    let pct = |mask: [bool; 2]| -> Result<f64, String> {
        let fp = eeloc::calibrate::footprint_bytes(&spec, &mask).map_err(e2s)? as f64;
        Ok(100.0 * (fp - base) / base)
    };
    let (both, e1, e2) = (pct([true, true])?, pct([true, false])?, pct([false, true])?);
    let detail = format!("overhead vs baseline bytes: both {both:.2}%, exit1 {e1:.2}%, exit2 {e2:.2}% (targets 25/22/3 ±2)");
    check(
        both > e1 && e1 > e2 && e2 > 0.0,
        format!("ordering violated; {detail}"),
    )?;
    let within = |v: f64, t: f64| (v - t).abs() <= 2.0;
    check(
        within(both, 25.0) && within(e1, 22.0) && within(e2, 3.0),
        detail.clone(),
    )?;
    Ok(detail)
}

fn criterion_3() -> Outcome {
    let spec = reference_topology(8, 16).map_err(e2s)?;
    let model = MultiExitModel::new(spec, 3).map_err(e2s)?;
    let off = ExitPolicy::all_off(model.num_exits());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = model.spec.input_shape;
    for i in 0..1000 {
        let data: Vec<f32> = (0..shape.len())
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let x = Tensor3::new(shape, data).map_err(e2s)?;
        let plain = baseline_forward(&model, &x).map_err(e2s)?;
        let gated = infer_full(&model, &off, &x).map_err(e2s)?;
        let same_bits = plain.logits.iter().map(|v| v.to_bits()).eq(gated
            .output
            .logits
            .iter()
            .map(|v| v.to_bits()));
        check(
            same_bits && plain.class == gated.trace.predicted,
            format!("input {i} differs"),
        )?;
        check(
            gated.trace.exit_taken == ExitTaken::Final,
            format!("input {i} exited with all exits off"),
        )?;
    }
    Ok("1000 random inputs: logits bit-identical, predictions equal".into())
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let nets = gradcheck_nets();
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    let mut kinds = std::collections::BTreeSet::new();
    for (i, (stack, seed)) in nets.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let mut weights: WeightStore<f64> =
            WeightStore::<f32>::init(stack.layers(), &mut rng).cast();
        common::jitter(&mut weights, 0.1, &mut rng);
        let shape = stack.input_shape();
        let x: Vec<f64> = (0..shape.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let x = Tensor3::new(shape, x).map_err(e2s)?;
        let layers: Vec<_> = stack.layers().iter().collect();
        for l in &layers {
            kinds.insert(format!("{:?}", std::mem::discriminant(&l.kind)));
        }
        let r = common::check_gradients(&layers, &weights, &x, i % 3, 1e-4, 1e-6);
        worst = worst.max(r.worst);
        checked += r.checked;
        skipped += r.skipped;
    }
    let elapsed = start.elapsed();
    check(
        kinds.len() == 8,
        format!("only {} layer kinds covered", kinds.len()),
    )?;
    check(worst <= 1e-4, format!("max relative error {worst:.3e}"))?;
    check(
        skipped * 20 <= checked,
        format!("{skipped} of {} values skipped at kinks", checked + skipped),
    )?;
    check(
        elapsed < Duration::from_secs(60),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "{} networks, all 8 layer kinds, {checked} values checked ({skipped} on kinks skipped), \
         max relative error {worst:.2e}, {elapsed:.2?}",
        nets.len()
    ))
}

fn gradcheck_nets() -> Vec<(LayerStack, u64)> {
    let s = |h, w, c| Shape::new(h, w, c);
    vec![
        (
            LayerStack::new(s(6, 6, 1))
                .conv2d("a", 2, 1, 3)
                .unwrap()
                .relu()
                .unwrap()
                .flatten()
                .unwrap()
                .dense("o", 3)
                .unwrap()
                .softmax()
                .unwrap(),
            1,
        ),
        (
            LayerStack::new(s(7, 7, 2))
                .conv2d("a", 3, 2, 4)
                .unwrap()
                .relu()
                .unwrap()
                .maxpool(2, 1)
                .unwrap()
                .flatten()
                .unwrap()
                .dense("o", 3)
                .unwrap()
                .softmax()
                .unwrap(),
            2,
        ),
        (
            LayerStack::new(s(6, 5, 3))
                .depthwise("dw", 2, 1)
                .unwrap()
                .relu()
                .unwrap()
                .pointwise("pw", 4)
                .unwrap()
                .relu()
                .unwrap()
                .flatten()
                .unwrap()
                .dense("o", 3)
                .unwrap()
                .softmax()
                .unwrap(),
            3,
        ),
        (
            LayerStack::new(s(8, 8, 1))
                .conv2d("a", 2, 1, 2)
                .unwrap()
                .relu()
                .unwrap()
                .maxpool(2, 2)
                .unwrap()
                .depthwise("dw", 2, 1)
                .unwrap()
                .pointwise("pw", 3)
                .unwrap()
                .flatten()
                .unwrap()
                .dense("h", 6)
                .unwrap()
                .relu()
                .unwrap()
                .dense("o", 3)
                .unwrap()
                .softmax()
                .unwrap(),
            4,
        ),
        (
            LayerStack::new(s(1, 1, 10))
                .flatten()
                .unwrap()
                .dense("h", 7)
                .unwrap()
                .relu()
                .unwrap()
                .dense("o", 4)
                .unwrap()
                .softmax()
                .unwrap(),
            5,
        ),
        (
            LayerStack::new(s(5, 5, 2))
                .depthwise("dw", 3, 2)
                .unwrap()
                .maxpool(2, 1)
                .unwrap()
                .pointwise("pw", 2)
                .unwrap()
                .relu()
                .unwrap()
                .flatten()
                .unwrap()
                .dense("o", 3)
                .unwrap()
                .softmax()
                .unwrap(),
            6,
        ),
    ]
}

/// Exit-rate and MAC monotonicity over a fixed 500-sample set.
fn criterion_5() -> Outcome {
    let data = synth_generate(&SynthParams {
        classes: 10,
        samples_per_class: 50,
        seed: 5,
        ..Default::default()
    })
    .map_err(e2s)?;
    let set = EvalSet::from_dataset(&data).map_err(e2s)?;
    let side = data.image_side();
    let mut model =
        MultiExitModel::new(common::two_exit_spec(side, 10, [8, 16, 16], 4), 9).map_err(e2s)?;
    let hp = HyperParams {
        epochs: 3,
        ..Default::default()
    };
    train_baseline(&mut model, &set.inputs, &set.labels, &hp).map_err(e2s)?;
    let hp_exit = HyperParams {
        epochs: 1,
        ..Default::default()
    };
    train_all_exits(&mut model, &set.inputs, &set.labels, &hp_exit).map_err(e2s)?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut total = 0;
    for method in UncertaintyMethod::ALL {
        let (lo, hi) = method.threshold_domain();
        let hi = if hi.is_finite() { hi } else { 12.0 };
        let mut thetas: Vec<f64> = (0..=20).map(|k| lo + (hi - lo) * k as f64 / 20.0).collect();
        thetas.extend((0..4).map(|_| rng.random_range(lo..hi)));
        thetas.sort_by(f64::total_cmp);
        // Order thetas from "exits least" to "exits most".
        if method.higher_is_confident() {
            thetas.reverse();
        }
        total += thetas.len();
        let mut prev: Option<(f64, f64, f64, f64)> = None;
        for &t in &thetas {
            let both =
                evaluate_policy(&model, &ExitPolicy::uniform(2, method, t), &set).map_err(e2s)?;
            let only2 = ExitPolicy {
                exits: vec![None, ExitPolicy::uniform(1, method, t).exits[0]],
            };
            let second = evaluate_policy(&model, &only2, &set).map_err(e2s)?;
            let cur = (
                both.exit_rates[0],
                both.exit_rates[0] + both.exit_rates[1],
                second.exit_rates[1],
                both.mean_macs,
            );
            if let Some(p) = prev {
                check(
                    cur.0 >= p.0 && cur.1 >= p.1 && cur.2 >= p.2 && cur.3 <= p.3,
                    format!("{method} at theta {t}: {cur:?} after {p:?}"),
                )?;
            }
            prev = Some(cur);
        }
    }
    Ok(format!(
        "500 samples, 4 methods, {total} thresholds: exit-1 rate, cumulative early-exit rate, \
         single-exit rate and mean MACs monotone"
    ))
}

fn desk_data() -> Result<(EvalSet, EvalSet, EvalSet, usize), String> {
    let data = synth_generate(&SynthParams::default()).map_err(e2s)?;
    let (train, calib, test) = split(&data, [0.8, 0.1, 0.1], 1).map_err(e2s)?;
    Ok((
        EvalSet::from_dataset(&train).map_err(e2s)?,
        EvalSet::from_dataset(&calib).map_err(e2s)?,
        EvalSet::from_dataset(&test).map_err(e2s)?,
        data.image_side(),
    ))
}

fn criterion_6(shared: &mut Option<DeskRun>) -> Outcome {
    let start = Instant::now();
    let (train, calib, test, side) = desk_data()?;
    let mut model =
        MultiExitModel::new(reference_topology(side, 16).map_err(e2s)?, 1).map_err(e2s)?;
    let hp = HyperParams {
        learning_rate: 0.2,
        epochs: 30,
        batch_size: 32,
        seed: 1,
    };
    train_baseline(&mut model, &train.inputs, &train.labels, &hp).map_err(e2s)?;
    let off = ExitPolicy::all_off(2);
    let train_acc = evaluate_policy(&model, &off, &train).map_err(e2s)?.accuracy;
    let t_base = start.elapsed();
    train_all_exits(&mut model, &train.inputs, &train.labels, &hp).map_err(e2s)?;
    let t_exits = start.elapsed();
    let space = ConfigSpace::with_default_grid(2, UncertaintyMethod::Margin);
    let result = calibrate(
        &model,
        &space,
        &calib,
        SelectionPolicy::Default,
        Objective::Accuracy,
    )
    .map_err(e2s)?;
    let t_cal = start.elapsed();
    let (base, sel) = (result.baseline().clone(), result.selected().clone());
    let reduction = 1.0 - sel.mean_macs / base.mean_macs;
    let on_test = evaluate_policy(&model, &sel.policy, &test).map_err(e2s)?;
    let early: f64 = on_test.exit_rates.iter().sum();
    let elapsed = start.elapsed();
    let detail = format!(
        "train acc {train_acc:.4}; selected {} (calib acc {:.4} vs baseline {:.4}, MACs -{:.1}%); \
         test early-exit {:.1}%, test acc {:.4}; {elapsed:.1?} (baseline {t_base:.1?}, exits {:.1?}, calibration {:.1?})",
        sel.policy.describe(),
        sel.accuracy,
        base.accuracy,
        100.0 * reduction,
        100.0 * early,
        on_test.accuracy,
        t_exits - t_base,
        t_cal - t_exits,
    );
    *shared = Some(DeskRun { model, test });
    check(
        train_acc >= 0.95,
        format!("baseline train accuracy below 0.95; {detail}"),
    )?;
    check(
        sel.accuracy >= base.accuracy,
        format!("calibration accuracy below baseline; {detail}"),
    )?;
    check(
        reduction >= 0.30,
        format!("MAC reduction below 30%; {detail}"),
    )?;
    check(
        early >= 0.60,
        format!("early-exit share below 60%; {detail}"),
    )?;
    check(
        elapsed < Duration::from_secs(300),
        format!("too slow; {detail}"),
    )?;
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let (train, _, test, _) = desk_data()?;
    let hp = HyperParams {
        learning_rate: 0.2,
        epochs: 5,
        batch_size: 32,
        seed: 2,
    };
    let points = depth_study(&[1, 2, 3], &train, &test, &hp, 2, 16).map_err(e2s)?;
    let macs: Vec<u64> = points.iter().map(|p| p.macs).collect();
    check(
        macs.windows(2).all(|w| w[0] < w[1]),
        format!("MACs not increasing: {macs:?}"),
    )?;
    let factor = macs[2] as f64 / macs[0] as f64;
    check(
        factor >= 8.0,
        format!("depth-3/depth-1 MAC factor only {factor:.1}"),
    )?;
    let acc: Vec<String> = points
        .iter()
        .map(|p| format!("{:.3}", p.accuracy))
        .collect();
    Ok(format!(
        "MACs {macs:?} (depth 3 = {factor:.0}x depth 1); accuracies {acc:?} (report only)"
    ))
}

fn criterion_8() -> Outcome {
    let Some(train_path) = std::env::var_os("EELOC_UJI_TRAIN").map(PathBuf::from) else {
        return Err("UJIndoorLoc not available: set EELOC_UJI_TRAIN to trainingData.csv".into());
    };
    let start = Instant::now();
    let full = load_ujindoorloc(&train_path).map_err(e2s)?;
    let (mut train, calib, mut test) = split(&full, [0.7, 0.1, 0.2], 3).map_err(e2s)?;
    if let Some(test_path) = std::env::var_os("EELOC_UJI_TEST").map(PathBuf::from) {
        test = load_ujindoorloc(&test_path).map_err(e2s)?;
        train = full.clone();
    }
    let _ = calib;
    let train = train.take_per_class(400);
    let r = common::uji_pipeline(&train, &test)?;
    let elapsed = start.elapsed();
    let detail = format!(
        "{} sweep points; theta 0.03: acc {:.4} vs baseline {:.4}, MACs -{:.1}%; {elapsed:.1?}",
        r.points,
        r.accuracy,
        r.baseline_accuracy,
        100.0 * r.mac_drop
    );
    check(r.points == 25, detail.clone())?;
    check(
        (r.accuracy - r.baseline_accuracy).abs() <= 0.01,
        detail.clone(),
    )?;
    check(r.mac_drop >= 0.10, detail.clone())?;
    check(elapsed < Duration::from_secs(1800), detail.clone())?;
    Ok(detail)
}

fn criterion_9(shared: &Option<DeskRun>) -> Outcome {
    let Some(run) = shared else {
        return Err("needs the trained desk-scale model from criterion 6".into());
    };
    let m = UncertaintyMethod::Margin;
    let spec = SweepSpec {
        method: m,
        thetas: ThetaGrid::List(vec![m.always_exit_threshold(), m.never_exit_threshold()]),
        enabled: vec![true, true],
    };
    let points = sweep_threshold(&run.model, &spec, &run.test).map_err(e2s)?;
    let base = evaluate_policy(&run.model, &ExitPolicy::all_off(2), &run.test).map_err(e2s)?;
    let always = points
        .iter()
        .find(|p| p.theta == m.always_exit_threshold())
        .ok_or("missing point")?;
    let never = points
        .iter()
        .find(|p| p.theta == m.never_exit_threshold())
        .ok_or("missing point")?;
    let stage1_branch = (run.model.spec.stage_macs()[0] + run.model.spec.exit_macs()[0]) as f64;
    let detail = format!(
        "never-exit acc {} vs baseline {}; always-exit mean MACs {} vs stage1+branch {}",
        never.accuracy, base.accuracy, always.mean_macs, stage1_branch
    );
    check(never.accuracy == base.accuracy, detail.clone())?;
    check(always.mean_macs == stage1_branch, detail.clone())?;
    Ok(detail)
}

type Criterion = Box<dyn FnOnce(&mut Option<DeskRun>) -> Outcome>;

fn main() {
    let mut shared = None;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 reference parameter table", Box::new(|_| criterion_1())),
        ("2 memory-footprint ratios", Box::new(|_| criterion_2())),
        ("3 baseline equivalence", Box::new(|_| criterion_3())),
        ("4 gradient checks", Box::new(|_| criterion_4())),
        ("5 monotonicity", Box::new(|_| criterion_5())),
        ("6 desk-scale end-to-end", Box::new(criterion_6)),
        ("7 depth study", Box::new(|_| criterion_7())),
        ("8 UJIndoorLoc generality", Box::new(|_| criterion_8())),
        ("9 sweep extremes", Box::new(|s| criterion_9(s))),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut shared))).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {:?}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(p.downcast_ref::<&str>().copied())
            ))
        });
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS - {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL - {why}");
            }
        }
    }
    println!("acceptance: {failed} of 9 criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
