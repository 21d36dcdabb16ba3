use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ConfigReport;
use crate::error::{invalid, Error, Result};
use crate::exitnet::ExitPolicy;

/// What "error" means during selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Top-1 accuracy; error is `1 - accuracy`.
    #[default]
    Accuracy,
    /// Mean localization error in meters.
    Error,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Objective::Accuracy),
            "error" => Ok(Objective::Error),
            _ => invalid(format!("unknown objective '{s}' (accuracy|error)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Fewest MACs with no loss against the baseline.
    #[default]
    Default,
    /// Lowest error with mean MACs at most the target.
    LatencyTarget(f64),
    /// Fewest MACs with error at most the target.
    ErrorTarget(f64),
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPolicy::Default => write!(f, "default"),
            SelectionPolicy::LatencyTarget(t) => write!(f, "latency:{t}"),
            SelectionPolicy::ErrorTarget(e) => write!(f, "error:{e}"),
        }
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let target = |v: &str| -> Result<f64> {
            match v.parse::<f64>() {
                Ok(t) if t.is_finite() && t >= 0.0 => Ok(t),
                _ => invalid(format!("bad target '{v}' in policy '{s}'")),
            }
        };
        match s.split_once(':') {
            None if s == "default" => Ok(SelectionPolicy::Default),
            Some(("latency", v)) => Ok(SelectionPolicy::LatencyTarget(target(v)?)),
            Some(("error", v)) => Ok(SelectionPolicy::ErrorTarget(target(v)?)),
            _ => invalid(format!(
                "unknown policy '{s}' (default|latency:<macs>|error:<e>)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Index into the report list.
    pub index: usize,
    pub policy: ExitPolicy,
    pub selection_policy: SelectionPolicy,
    pub objective: Objective,
    /// False when the baseline was returned because nothing beat it.
    pub improved: bool,
    pub feasible: usize,
}

fn loss(r: &ConfigReport, objective: Objective) -> Result<f64> {
    match objective {
        Objective::Accuracy => Ok(1.0 - r.accuracy),
        Objective::Error => r.error_m.ok_or_else(|| {
            Error::InvalidArgument(format!("config {} has no localization error", r.index))
        }),
    }
}

/// Cheaper first, then fewer resident exits, then enumeration order.
fn cost_order(a: &ConfigReport, b: &ConfigReport) -> Ordering {
    a.mean_macs
        .total_cmp(&b.mean_macs)
        .then(a.enabled_count().cmp(&b.enabled_count()))
        .then(a.index.cmp(&b.index))
}

/// Picks a configuration from `reports`, whose first entry must be the
/// all-off baseline. When no configuration satisfies the policy the
/// baseline is returned with `improved == false`.
pub fn select_config(
    reports: &[ConfigReport],
    policy: SelectionPolicy,
    objective: Objective,
) -> Result<Selection> {
    let Some(baseline) = reports.first() else {
        return invalid("no configurations to select from");
    };
    if baseline.enabled_count() != 0 {
        return invalid("first report must be the all-off baseline");
    }
    let losses = reports
        .iter()
        .map(|r| loss(r, objective))
        .collect::<Result<Vec<_>>>()?;
    let base_loss = losses[0];
    let candidates: Vec<(usize, &ConfigReport)> = reports
        .iter()
        .enumerate()
        .filter(|&(i, r)| match policy {
            SelectionPolicy::Default => losses[i] <= base_loss,
            SelectionPolicy::LatencyTarget(t) => r.mean_macs <= t,
            SelectionPolicy::ErrorTarget(e) => losses[i] <= e,
        })
        .collect();
    let best = match policy {
        SelectionPolicy::LatencyTarget(_) => candidates.iter().min_by(|a, b| {
            losses[a.0]
                .total_cmp(&losses[b.0])
                .then(cost_order(a.1, b.1))
        }),
        _ => candidates.iter().min_by(|a, b| cost_order(a.1, b.1)),
    };
    let index = best.map(|&(i, _)| i).unwrap_or(0);
    Ok(Selection {
        index,
        policy: reports[index].policy.clone(),
        improved: index != 0,
        selection_policy: policy,
        objective,
        feasible: candidates.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exitnet::{ExitRule, UncertaintyMethod};

    fn report(index: usize, enabled: usize, accuracy: f64, mean_macs: f64) -> ConfigReport {
        let rule = Some(ExitRule {
            method: UncertaintyMethod::Margin,
            threshold: 0.5,
        });
        let exits = (0..2)
            .map(|i| if i < enabled { rule } else { None })
            .collect();
        ConfigReport {
            index,
            policy: ExitPolicy { exits },
            accuracy,
            error_m: Some(10.0 * (1.0 - accuracy)),
            mean_macs,
            mean_ns: 0.0,
            exit_rates: vec![0.0; 2],
            footprint_bytes: 0,
        }
    }

    #[test]
    fn default_picks_cheapest_without_loss() {
        let rs = vec![
            report(0, 0, 0.95, 200.0),
            report(1, 1, 0.96, 100.0),
            report(2, 2, 0.95, 80.0),
        ];
        let s = select_config(&rs, SelectionPolicy::Default, Objective::Accuracy).unwrap();
        assert_eq!(s.index, 2);
        assert!(s.improved);
        assert_eq!(s.feasible, 3);
    }

    #[test]
    fn only_baseline_feasible_is_flagged() {
        let rs = vec![report(0, 0, 0.95, 200.0), report(1, 1, 0.90, 100.0)];
        let s = select_config(&rs, SelectionPolicy::Default, Objective::Accuracy).unwrap();
        assert_eq!(s.index, 0);
        assert!(!s.improved);
        assert_eq!(s.policy, ExitPolicy::all_off(2));
    }

    #[test]
    fn equal_macs_prefers_fewer_exits() {
        let rs = vec![
            report(0, 0, 0.95, 200.0),
            report(1, 2, 0.95, 100.0),
            report(2, 1, 0.95, 100.0),
        ];
        let s = select_config(&rs, SelectionPolicy::Default, Objective::Accuracy).unwrap();
        assert_eq!(s.index, 2);
    }

    #[test]
    fn targets() {
        let rs = vec![
            report(0, 0, 0.95, 200.0),
            report(1, 1, 0.93, 100.0),
            report(2, 2, 0.90, 50.0),
        ];
        let lat = select_config(
            &rs,
            SelectionPolicy::LatencyTarget(120.0),
            Objective::Accuracy,
        )
        .unwrap();
        assert_eq!(lat.index, 1);
        let err =
            select_config(&rs, SelectionPolicy::ErrorTarget(0.08), Objective::Accuracy).unwrap();
        assert_eq!(err.index, 1);
        let err_m =
            select_config(&rs, SelectionPolicy::ErrorTarget(1.0), Objective::Error).unwrap();
        assert_eq!(err_m.index, 2);
        let none = select_config(
            &rs,
            SelectionPolicy::LatencyTarget(10.0),
            Objective::Accuracy,
        )
        .unwrap();
        assert_eq!((none.index, none.improved, none.feasible), (0, false, 0));
    }

    #[test]
    fn policy_strings() {
        assert_eq!(
            "default".parse::<SelectionPolicy>().unwrap(),
            SelectionPolicy::Default
        );
        assert_eq!(
            "latency:5e5".parse::<SelectionPolicy>().unwrap(),
            SelectionPolicy::LatencyTarget(5e5)
        );
        assert_eq!(
            "error:2.5".parse::<SelectionPolicy>().unwrap(),
            SelectionPolicy::ErrorTarget(2.5)
        );
        assert!("fast".parse::<SelectionPolicy>().is_err());
        assert!("error:-1".parse::<SelectionPolicy>().is_err());
    }
}
