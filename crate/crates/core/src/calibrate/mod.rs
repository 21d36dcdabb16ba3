//! Self-configuration: enumerate exit switch/threshold combinations, score
//! each on a labeled calibration set and pick one.

mod eval;
mod export;
mod select;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
pub use crate::exitnet::footprint_bytes;
use crate::exitnet::{ExitPolicy, ExitRule, MultiExitModel, UncertaintyMethod};
pub use eval::{evaluate_policy, EvalSet, PolicyMetrics};
pub use export::{read_reports_csv, write_reports_csv, write_summary_json, CalibrationSummary};
pub use select::{select_config, Objective, Selection, SelectionPolicy};

/// Threshold grid of one exit; the exit may also be switched off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitSpace {
    pub method: UncertaintyMethod,
    pub grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSpace {
    pub exits: Vec<ExitSpace>,
}

impl ConfigSpace {
    /// Every exit uses `method` with the same grid.
    pub fn uniform(n_exits: usize, method: UncertaintyMethod, grid: Vec<f64>) -> Self {
        Self {
            exits: vec![ExitSpace { method, grid }; n_exits],
        }
    }

    /// Every exit uses `method` with its default grid.
    pub fn with_default_grid(n_exits: usize, method: UncertaintyMethod) -> Self {
        Self::uniform(n_exits, method, method.default_grid())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.exits.iter().enumerate() {
            if e.grid.is_empty() {
                return invalid(format!("exit {i} has an empty threshold grid"));
            }
            if e.grid.windows(2).any(|w| w[0] >= w[1]) {
                return invalid(format!("exit {i} grid is not strictly ascending"));
            }
            for &t in &e.grid {
                e.method.check_threshold(t)?;
            }
        }
        Ok(())
    }

    /// Closed-form count: sum over enabled subsets of the product of grid sizes.
    pub fn config_count(&self) -> usize {
        self.exits.iter().map(|e| 1 + e.grid.len()).product()
    }
}

/// Baseline first, then switch masks in ascending binary order (bit i =
/// exit i), each expanded over the grids of its enabled exits with the
/// first exit varying slowest.
pub fn enumerate_configs(space: &ConfigSpace) -> Result<Vec<ExitPolicy>> {
    space.validate()?;
    let n = space.exits.len();
    if n >= usize::BITS as usize {
        return invalid(format!("{n} exits is too many to enumerate"));
    }
    let mut out = vec![ExitPolicy::all_off(n)];
    for mask in 1usize..(1 << n) {
        let mut partial: Vec<Vec<Option<ExitRule>>> = vec![Vec::with_capacity(n)];
        for (i, e) in space.exits.iter().enumerate() {
            if mask & (1 << i) == 0 {
                partial.iter_mut().for_each(|p| p.push(None));
                continue;
            }
            partial = partial
                .into_iter()
                .flat_map(|p| {
                    e.grid.iter().map(move |&threshold| {
                        let mut q = p.clone();
                        q.push(Some(ExitRule {
                            method: e.method,
                            threshold,
                        }));
                        q
                    })
                })
                .collect();
        }
        out.extend(partial.into_iter().map(|exits| ExitPolicy { exits }));
    }
    Ok(out)
}

/// Calibration-set metrics of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    /// Position in the enumeration order.
    pub index: usize,
    pub policy: ExitPolicy,
    pub accuracy: f64,
    pub error_m: Option<f64>,
    pub mean_macs: f64,
    pub mean_ns: f64,
    pub exit_rates: Vec<f64>,
    pub footprint_bytes: u64,
}

impl ConfigReport {
    pub fn enabled_count(&self) -> usize {
        self.policy.enabled_count()
    }
}

pub fn evaluate_config(
    model: &MultiExitModel,
    policy: &ExitPolicy,
    set: &EvalSet,
) -> Result<ConfigReport> {
    let m = evaluate_policy(model, policy, set)?;
    let switches: Vec<bool> = policy.exits.iter().map(Option::is_some).collect();
    Ok(ConfigReport {
        index: 0,
        policy: policy.clone(),
        accuracy: m.accuracy,
        error_m: m.error_m,
        mean_macs: m.mean_macs,
        mean_ns: m.mean_ns,
        exit_rates: m.exit_rates,
        footprint_bytes: footprint_bytes(&model.spec, &switches)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// One report per enumerated config; `reports[0]` is the baseline.
    pub reports: Vec<ConfigReport>,
    pub selection: Selection,
}

impl CalibrationResult {
    pub fn baseline(&self) -> &ConfigReport {
        &self.reports[0]
    }

    pub fn selected(&self) -> &ConfigReport {
        &self.reports[self.selection.index]
    }
}

/// Evaluates every configuration (in parallel) and applies `policy`.
pub fn calibrate(
    model: &MultiExitModel,
    space: &ConfigSpace,
    set: &EvalSet,
    policy: SelectionPolicy,
    objective: Objective,
) -> Result<CalibrationResult> {
    if space.exits.len() != model.num_exits() {
        return invalid(format!(
            "config space covers {} exits, model has {}",
            space.exits.len(),
            model.num_exits()
        ));
    }
    if set.is_empty() {
        return invalid("calibration set is empty");
    }
    if objective == Objective::Error && set.coords.is_none() {
        return invalid("error objective needs reference point coordinates");
    }
    let configs = enumerate_configs(space)?;
    let reports = configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| evaluate_config(model, c, set).map(|r| ConfigReport { index: i, ..r }))
        .collect::<Result<Vec<_>>>()?;
    let selection = select_config(&reports, policy, objective)?;
    Ok(CalibrationResult { reports, selection })
}
