//! Threshold sweeps, depth studies, timing with confidence intervals and
//! CSV export of the resulting curves.

mod csvio;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{evaluate_policy, EvalSet};
use crate::error::{invalid, Result};
use crate::exitnet::{
    baseline_of_depth, infer_with_exits, train_baseline, ExitPolicy, ExitRule, MultiExitModel,
    UncertaintyMethod,
};
use crate::tensornn::HyperParams;
pub use csvio::{read_sweep_csv, write_depth_csv, write_sweep_csv, write_timing_csv};

/// Untimed iterations run before every timing measurement.
pub const WARMUP_ITERATIONS: usize = 10;

/// Thresholds to sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaGrid {
    Range { start: f64, stop: f64, step: f64 },
    List(Vec<f64>),
}

impl ThetaGrid {
    /// Grid values in ascending order. A range includes `stop` when it
    /// lands on the grid (up to rounding).
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            ThetaGrid::Range { start, stop, step } => {
                if !(step.is_finite() && *step > 0.0) {
                    return invalid(format!("sweep step must be positive, got {step}"));
                }
                if !(start.is_finite() && stop.is_finite()) || start > stop {
                    return invalid(format!("sweep range {start}..{stop} is empty"));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                Ok((0..count)
                    .map(|k| round12(start + k as f64 * step))
                    .collect())
            }
            ThetaGrid::List(v) => {
                if v.is_empty() || v.iter().any(|t| t.is_nan()) {
                    return invalid("sweep list is empty or holds NaN");
                }
                let mut v = v.clone();
                v.sort_by(f64::total_cmp);
                v.dedup();
                Ok(v)
            }
        }
    }
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub method: UncertaintyMethod,
    pub thetas: ThetaGrid,
    /// Which exits participate; the rest stay off.
    pub enabled: Vec<bool>,
}

impl SweepSpec {
    pub fn policy(&self, theta: f64) -> ExitPolicy {
        ExitPolicy {
            exits: self
                .enabled
                .iter()
                .map(|&on| {
                    on.then_some(ExitRule {
                        method: self.method,
                        threshold: theta,
                    })
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub method: UncertaintyMethod,
    pub accuracy: f64,
    pub error_m: Option<f64>,
    pub mean_macs: f64,
    pub mean_ns: f64,
    pub exit_rates: Vec<f64>,
}

/// One point per threshold, in ascending threshold order.
pub fn sweep_threshold(
    model: &MultiExitModel,
    spec: &SweepSpec,
    set: &EvalSet,
) -> Result<Vec<CurvePoint>> {
    if spec.enabled.len() != model.num_exits() {
        return invalid(format!(
            "mask covers {} exits, model has {}",
            spec.enabled.len(),
            model.num_exits()
        ));
    }
    let thetas = spec.thetas.values()?;
    for &t in &thetas {
        spec.method.check_threshold(t)?;
    }
    thetas
        .par_iter()
        .map(|&theta| {
            let m = evaluate_policy(model, &spec.policy(theta), set)?;
            Ok(CurvePoint {
                theta,
                method: spec.method,
                accuracy: m.accuracy,
                error_m: m.error_m,
                mean_macs: m.mean_macs,
                mean_ns: m.mean_ns,
                exit_rates: m.exit_rates,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub depth: usize,
    pub accuracy: f64,
    pub macs: u64,
    pub mean_ns: f64,
}

/// Trains and evaluates an exit-free baseline for each depth, all from the
/// same seed and data.
pub fn depth_study(
    depths: &[usize],
    train: &EvalSet,
    test: &EvalSet,
    hp: &HyperParams,
    seed: u64,
    classes: usize,
) -> Result<Vec<DepthPoint>> {
    let Some(first) = train.inputs.first() else {
        return invalid("training set is empty");
    };
    let side = first.shape().height;
    depths
        .iter()
        .map(|&depth| {
            let mut model = MultiExitModel::new(baseline_of_depth(side, classes, depth)?, seed)?;
            train_baseline(&mut model, &train.inputs, &train.labels, hp)?;
            let m = evaluate_policy(&model, &ExitPolicy::all_off(0), test)?;
            Ok(DepthPoint {
                depth,
                accuracy: m.accuracy,
                macs: model.spec.baseline_macs(),
                mean_ns: m.mean_ns,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub policy: String,
    /// Mean per-sample wall-clock across repetitions.
    pub mean_ns: f64,
    pub std_ns: f64,
    /// Half-width of the 95% confidence interval of the mean.
    pub ci95_ns: f64,
    pub n: usize,
}

/// Mean and 95% confidence half-width (normal approximation) of repeated
/// measurements.
pub fn mean_ci95(samples: &[f64]) -> Result<(f64, f64, f64)> {
    if samples.len() < 2 {
        return invalid(format!(
            "need at least 2 repetitions for a confidence interval, got {}",
            samples.len()
        ));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    Ok((mean, sd, 1.96 * sd / n.sqrt()))
}

/// Each repetition runs the whole input set single-threaded and records the
/// mean per-sample time; warm-up iterations are not recorded.
pub fn time_inference(
    model: &MultiExitModel,
    policy: &ExitPolicy,
    inputs: &[crate::tensornn::Tensor3<f32>],
    repetitions: usize,
) -> Result<TimingStats> {
    if inputs.is_empty() {
        return invalid("nothing to time: the input set is empty");
    }
    if repetitions < 2 {
        return invalid(format!(
            "need at least 2 repetitions for a confidence interval, got {repetitions}"
        ));
    }
    policy.validate(model.num_exits())?;
    for x in inputs.iter().cycle().take(WARMUP_ITERATIONS) {
        std::hint::black_box(infer_with_exits(model, policy, x)?);
    }
    let mut per_rep = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for x in inputs {
            std::hint::black_box(infer_with_exits(model, policy, x)?);
        }
        per_rep.push(start.elapsed().as_nanos() as f64 / inputs.len() as f64);
    }
    let (mean_ns, std_ns, ci95_ns) = mean_ci95(&per_rep)?;
    Ok(TimingStats {
        policy: policy.describe(),
        mean_ns,
        std_ns,
        ci95_ns,
        n: repetitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn paper_grid_has_25_points() {
        let g = ThetaGrid::Range {
            start: 0.01,
            stop: 0.50,
            step: 0.02,
        }
        .values()
        .unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[24], 0.49);
        assert_eq!(g[1], 0.03);
    }

    #[test]
    fn inclusive_stop_and_errors() {
        let g = ThetaGrid::Range {
            start: 0.1,
            stop: 0.9,
            step: 0.1,
        }
        .values()
        .unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[8], 0.9);
        assert!(ThetaGrid::Range {
            start: 0.5,
            stop: 0.1,
            step: 0.1
        }
        .values()
        .is_err());
        assert!(ThetaGrid::Range {
            start: 0.1,
            stop: 0.5,
            step: 0.0
        }
        .values()
        .is_err());
        assert!(ThetaGrid::List(vec![]).values().is_err());
        assert_eq!(
            ThetaGrid::List(vec![0.3, 0.1]).values().unwrap(),
            vec![0.1, 0.3]
        );
    }

    #[test]
    fn ci_formula() {
        let samples: Vec<f64> = (0..100).map(|i| (i % 10) as f64).collect();
        let (mean, sd, ci) = mean_ci95(&samples).unwrap();
        assert_relative_eq!(mean, 4.5);
        assert_relative_eq!(ci, 1.96 * sd / 10.0);
        assert!(mean_ci95(&[1.0]).is_err());
    }
}
