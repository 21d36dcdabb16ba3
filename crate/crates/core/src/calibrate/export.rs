use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CalibrationResult, ConfigReport, Objective, SelectionPolicy};
use crate::error::{Error, Result};
use crate::exitnet::{ExitPolicy, ExitRule};

fn header(n_exits: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "index",
        "switches",
        "methods",
        "thresholds",
        "accuracy",
        "error_m",
        "mean_macs",
        "mean_ns",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=n_exits).map(|i| format!("exit{i}_rate")));
    h.push("footprint_bytes".into());
    h
}

/// One row per config. Per-exit fields are `;`-joined, with `-` for
/// disabled exits.
pub fn write_reports_csv(reports: &[ConfigReport], n_exits: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(n_exits))?;
    for r in reports {
        if r.policy.len() != n_exits || r.exit_rates.len() != n_exits {
            return Err(Error::InvalidArgument(format!(
                "report {} does not cover {n_exits} exits",
                r.index
            )));
        }
        let switches: String = r
            .policy
            .exits
            .iter()
            .map(|e| if e.is_some() { '1' } else { '0' })
            .collect();
        let join = |f: &dyn Fn(&ExitRule) -> String| {
            r.policy
                .exits
                .iter()
                .map(|e| e.as_ref().map_or("-".into(), f))
                .collect::<Vec<_>>()
                .join(";")
        };
        let mut row = vec![
            r.index.to_string(),
            switches,
            join(&|e| e.method.to_string()),
            join(&|e| e.threshold.to_string()),
            r.accuracy.to_string(),
            r.error_m.map(|e| e.to_string()).unwrap_or_default(),
            r.mean_macs.to_string(),
            r.mean_ns.to_string(),
        ];
        row.extend(r.exit_rates.iter().map(|v| v.to_string()));
        row.push(r.footprint_bytes.to_string());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let row = rec.position().map_or(0, |p| p.line() as usize);
    rec.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row,
            msg: format!("bad value in column {i}"),
        })
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<ConfigReport>> {
    let mut r = csv::Reader::from_path(path)?;
    let n_cols = r.headers()?.len();
    let n_exits = n_cols
        .checked_sub(9)
        .ok_or_else(|| Error::Format("too few columns in report CSV".into()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let switches: String = field(&rec, 1, path)?;
        let methods: String = field(&rec, 2, path)?;
        let thresholds: String = field(&rec, 3, path)?;
        let mut exits = Vec::with_capacity(n_exits);
        for ((s, m), t) in switches
            .chars()
            .zip(methods.split(';'))
            .zip(thresholds.split(';'))
        {
            exits.push(match s {
                '1' => Some(ExitRule {
                    method: m.parse()?,
                    threshold: t
                        .parse()
                        .map_err(|_| Error::Format(format!("bad threshold '{t}'")))?,
                }),
                _ => None,
            });
        }
        if exits.len() != n_exits {
            return Err(Error::Format(format!(
                "row has {} exits, header {n_exits}",
                exits.len()
            )));
        }
        let error_m = match rec.get(5) {
            Some("") | None => None,
            Some(_) => Some(field(&rec, 5, path)?),
        };
        out.push(ConfigReport {
            index: field(&rec, 0, path)?,
            policy: ExitPolicy { exits },
            accuracy: field(&rec, 4, path)?,
            error_m,
            mean_macs: field(&rec, 6, path)?,
            mean_ns: field(&rec, 7, path)?,
            exit_rates: (0..n_exits)
                .map(|i| field(&rec, 8 + i, path))
                .collect::<Result<_>>()?,
            footprint_bytes: field(&rec, 8 + n_exits, path)?,
        });
    }
    Ok(out)
}

/// Self-describing record of a calibration run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub writer: String,
    pub seed: Option<u64>,
    pub source_digest: Option<String>,
    pub calibration_samples: usize,
    pub configs: usize,
    pub selection_policy: SelectionPolicy,
    pub objective: Objective,
    pub improved: bool,
    pub selected: String,
    pub policy: ExitPolicy,
    pub baseline_report: ConfigReport,
    pub selected_report: ConfigReport,
}

impl CalibrationSummary {
    pub fn new(
        result: &CalibrationResult,
        samples: usize,
        seed: Option<u64>,
        source_digest: Option<String>,
    ) -> Self {
        Self {
            writer: format!("eeloc {}", env!("CARGO_PKG_VERSION")),
            seed,
            source_digest,
            calibration_samples: samples,
            configs: result.reports.len(),
            selection_policy: result.selection.selection_policy,
            objective: result.selection.objective,
            improved: result.selection.improved,
            selected: result.selection.policy.describe(),
            policy: result.selection.policy.clone(),
            baseline_report: result.baseline().clone(),
            selected_report: result.selected().clone(),
        }
    }
}

pub fn write_summary_json(summary: &CalibrationSummary, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(summary)?)?;
    Ok(())
}
